//! Weak horizontal inverse mean curvature flow in the first Heisenberg group.
//!
//! The arrival-time function `u` of the flow is computed as the `p → 1`
//! limit of `u_p = (1 − p) log w`, where `w` is horizontally p-harmonic in
//! the exterior of the initial set. Grid quadratures then measure the
//! geometric identities satisfied by the flow.

pub mod exact;
pub mod flow;
pub mod geom;
pub mod grid;
pub mod heis;
pub mod io;
pub mod plap;

pub use heis::{HPoint, HVector, SmoothFn, SymHess};
