//! Regularized horizontal p-Laplace Dirichlet problems on `box \ E0`.
//!
//! The unknown is the arrival-time form `u = (1-p) ln w` of a horizontally
//! p-harmonic `w`. In these variables the equation reads
//! `div0(e^{-u}(|∇0u|² + ε²)^{(p-2)/2} ∇0u) = 0` with `u = 0` on `∂E0`,
//! which stays well scaled as `p → 1` where `w` itself underflows.

mod assembly;
mod boundary;
mod config;
pub mod stencil;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{grad0_fd, GridError, GridField, GridSpec};
use crate::heis::{koranyi_dist, HPoint};

use assembly::{assemble, energy, Element, Material};
pub use boundary::{InnerBoundary, Layout};
pub use config::{InnerConfig, PLapConfig};
use stencil::{bicgstab, norm2, Ilu0, StencilMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PLapError {
    #[error("invalid parameter `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("barrier is undefined at distance {0} from its center")]
    BarrierDomain(f64),
    #[error("w is not positive at node {index} (value {value})")]
    NonPositive { index: usize, value: f64 },
    #[error("ball configuration is inconsistent with E0: {0}")]
    BallConfiguration(String),
}

impl PLapError {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Self::Config { field: field.to_string(), reason: reason.into() }
    }
}

/// Dirichlet data on the box faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OuterBc {
    /// `u = (4-p) ln(d(x, y0)/s)`, the lower barrier of a gauge ball
    /// `B_s(y0) ⊇ E0`. With `clamp_beyond = Some(R)` every node with
    /// `d(x, y0) ≥ R` also carries this data.
    BarrierMatched {
        y0: HPoint,
        s: f64,
        #[serde(default)]
        clamp_beyond: Option<f64>,
    },
    /// Constant arrival time on the faces.
    Constant { value: f64 },
}

impl OuterBc {
    pub fn value(&self, x: HPoint, p: f64) -> f64 {
        match *self {
            Self::BarrierMatched { y0, s, .. } => (4.0 - p) * (koranyi_dist(x, y0) / s).ln(),
            Self::Constant { value } => value,
        }
    }

    fn clamps(&self, x: HPoint) -> bool {
        match *self {
            Self::BarrierMatched { y0, clamp_beyond: Some(r), .. } => koranyi_dist(x, y0) >= r,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PLapProblem {
    pub p: f64,
    /// Regularization of `|∇0u|`, in arrival-time units.
    pub eps: f64,
    pub spec: GridSpec,
    pub inner: InnerBoundary,
    pub outer: OuterBc,
}

pub const DEFAULT_EPS: f64 = 1e-6;

impl PLapProblem {
    /// Unit-ball problem with exact far-field data on the faces.
    pub fn koranyi_ball(spec: GridSpec, center: HPoint, radius: f64, p: f64) -> Self {
        Self {
            p,
            eps: DEFAULT_EPS,
            spec,
            inner: InnerBoundary::KoranyiBall { center, radius },
            outer: OuterBc::BarrierMatched { y0: center, s: radius, clamp_beyond: None },
        }
    }

    pub fn validate(&self) -> Result<(), PLapError> {
        if !(self.p > 1.0 && self.p < 3.0) {
            return Err(PLapError::config("p", format!("must lie in (1, 3), got {}", self.p)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(PLapError::config("eps", "must be positive"));
        }
        self.spec.validate()?;
        self.inner.validate()?;
        match self.outer {
            OuterBc::BarrierMatched { y0, s, clamp_beyond } => {
                if !y0.is_finite() {
                    return Err(PLapError::config("outer.y0", "must be finite"));
                }
                if !(s > 0.0 && s.is_finite()) {
                    return Err(PLapError::config("outer.s", "must be positive"));
                }
                if let Some(c) = clamp_beyond {
                    if !(c > 0.0) {
                        return Err(PLapError::config("outer.clamp_beyond", "must be positive"));
                    }
                }
            }
            OuterBc::Constant { value } => {
                if !value.is_finite() {
                    return Err(PLapError::config("outer.value", "must be finite"));
                }
            }
        }
        Ok(())
    }

    /// The same configuration viewed through `δλ`.
    pub fn dilated(&self, lambda: f64) -> Self {
        let outer = match self.outer {
            OuterBc::BarrierMatched { y0, s, clamp_beyond } => OuterBc::BarrierMatched {
                y0: crate::heis::dilate(lambda, y0).unwrap_or(y0),
                s: lambda * s,
                clamp_beyond: clamp_beyond.map(|c| lambda * c),
            },
            c => c,
        };
        Self { spec: self.spec.dilated(lambda), inner: self.inner.dilated(lambda), outer, ..self.clone() }
    }
}

/// Explicit p-harmonic gauge profile `l(x) = (d(x, x0)/r)^{(4-p)/(1-p)}`.
pub fn barrier_upper(x: HPoint, x0: HPoint, r: f64, p: f64) -> Result<f64, PLapError> {
    let d = koranyi_dist(x, x0);
    if !(d > 0.0) {
        return Err(PLapError::BarrierDomain(d));
    }
    if !(p > 1.0 && p < 4.0) {
        return Err(PLapError::config("p", "barrier requires 1 < p < 4"));
    }
    Ok((d / r).powf((4.0 - p) / (1.0 - p)))
}

#[derive(Debug, Clone)]
pub struct PLapSolution {
    pub w: GridField,
    pub u_p: GridField,
    pub p: f64,
    pub eps: f64,
    /// Regularized energy of `w` after each accepted iterate.
    pub energy_history: Vec<f64>,
    /// Euclidean norm of the free-node residual after each accepted iterate.
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Nodes of `E0`.
    pub inside: Vec<bool>,
    /// Nodes of `Ω_box` carrying Dirichlet data.
    pub dirichlet: Vec<bool>,
}

/// JSON metadata written next to a solution dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub p: f64,
    pub eps: f64,
    pub converged: bool,
    pub iterations: usize,
    pub energy_history: Vec<f64>,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
}

impl PLapSolution {
    pub fn meta(&self) -> SolutionMeta {
        SolutionMeta {
            p: self.p,
            eps: self.eps,
            converged: self.converged,
            iterations: self.iterations,
            energy_history: self.energy_history.clone(),
            residual_history: self.residual_history.clone(),
            final_residual: self.final_residual,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        self.u_p.spec()
    }
}

/// Newton iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Relative residual reduction, or Newton step size relative to
    /// `1 + max|u|`, at which the iteration stops.
    pub tol: f64,
    pub max_iters: usize,
    pub krylov_rtol: f64,
    pub krylov_max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 60, krylov_rtol: 1e-6, krylov_max_iters: 2000 }
    }
}

impl SolveOptions {
    pub fn new(tol: f64, max_iters: usize) -> Self {
        Self { tol, max_iters, ..Self::default() }
    }
}

/// Initial iterate used when no warm start is supplied.
pub fn initial_guess(prob: &PLapProblem) -> Result<GridField, PLapError> {
    let k = 4.0 - prob.p;
    match &prob.inner {
        InnerBoundary::KoranyiBall { center, radius } => {
            Ok(GridField::from_fn(prob.spec, |x| (k * (koranyi_dist(x, *center) / radius).ln()).max(0.0))?)
        }
        InnerBoundary::Field { field } => Ok(field.map(|phi| (k * (1.0 + phi.max(0.0)).ln()).max(0.0))?),
    }
}

struct Workspace {
    layout: Layout,
    el: Element,
    mat: Material,
    free: Vec<bool>,
    exterior: Vec<bool>,
}

impl Workspace {
    fn new(prob: &PLapProblem) -> Result<Self, PLapError> {
        prob.validate()?;
        let outer = prob.outer;
        let layout = Layout::new(prob.spec, &prob.inner, |x| outer.clamps(x))?;
        let free: Vec<bool> = layout.fixed.iter().map(|f| !f).collect();
        let exterior: Vec<bool> = layout.inside.iter().map(|i| !i).collect();
        Ok(Self { el: Element::new(prob.spec), mat: Material { p: prob.p, eps: prob.eps }, layout, free, exterior })
    }

    fn impose(&self, prob: &PLapProblem, u: &mut [f64]) {
        for i in 0..u.len() {
            if self.layout.fixed[i] && !self.layout.inside[i] {
                u[i] = prob.outer.value(prob.spec.point(i), prob.p);
            }
        }
        self.layout.update_ghosts(u);
    }

    fn residual(&self, u: &[f64], r: &mut [f64], jac: Option<&mut StencilMatrix>) -> f64 {
        assemble(&self.el, self.mat, u, &self.free, r, jac);
        for (ri, f) in r.iter_mut().zip(&self.free) {
            if !f {
                *ri = 0.0;
            }
        }
        norm2(r)
    }

    fn energy(&self, u: &[f64]) -> f64 {
        energy(&self.el, self.mat, u, &self.exterior)
    }
}

/// Solves the problem from the default initial iterate.
pub fn solve(prob: &PLapProblem, tol: f64, max_iters: usize) -> Result<PLapSolution, PLapError> {
    solve_from(prob, None, SolveOptions::new(tol, max_iters))
}

/// Damped Newton iteration from `init` (or [`initial_guess`]). Steps are
/// backtracked until the residual norm decreases (Armijo); the linearized
/// systems are solved with ILU(0)-preconditioned BiCGStab. Non-convergence
/// is reported through [`PLapSolution::converged`] with the best iterate.
pub fn solve_from(prob: &PLapProblem, init: Option<&GridField>, opts: SolveOptions) -> Result<PLapSolution, PLapError> {
    let ws = Workspace::new(prob)?;
    let n = prob.spec.len();
    let mut u = match init {
        Some(f) => {
            if f.spec() != &prob.spec {
                return Err(GridError::SpecMismatch.into());
            }
            f.data().to_vec()
        }
        None => initial_guess(prob)?.into_data(),
    };
    ws.impose(prob, &mut u);
    let mut r = vec![0.0; n];
    let mut jac = StencilMatrix::zeros(prob.spec);
    let mut rn = ws.residual(&u, &mut r, Some(&mut jac));
    let r0 = rn;
    let mut energy_history = vec![ws.energy(&u)];
    let mut residual_history = vec![rn];
    let mut converged = rn == 0.0;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut rt = vec![0.0; n];
    let mut d = vec![0.0; n];
    while !converged && iterations < opts.max_iters {
        iterations += 1;
        jac.apply_dirichlet(&ws.layout.fixed);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let ilu = Ilu0::new(&jac);
        bicgstab(&jac, &ilu, &rhs, &mut d, opts.krylov_rtol, opts.krylov_max_iters);
        let mut theta = 1.0;
        let mut accepted = None;
        while theta >= 1e-4 {
            for i in 0..n {
                trial[i] = if ws.free[i] { u[i] + theta * d[i] } else { u[i] };
            }
            ws.layout.update_ghosts(&mut trial);
            let rtn = ws.residual(&trial, &mut rt, None);
            if rtn.is_finite() && rtn < (1.0 - 1e-4 * theta) * rn {
                accepted = Some(rtn);
                break;
            }
            theta *= 0.5;
        }
        let Some(new_rn) = accepted else { break };
        let step = (0..n).filter(|&i| ws.free[i]).fold(0.0f64, |m, i| m.max((theta * d[i]).abs()));
        std::mem::swap(&mut u, &mut trial);
        rn = ws.residual(&u, &mut r, Some(&mut jac));
        debug_assert_eq!(rn, new_rn);
        energy_history.push(ws.energy(&u));
        residual_history.push(rn);
        let scale = 1.0 + u.iter().zip(&ws.exterior).filter(|(_, e)| **e).fold(0.0f64, |m, (v, _)| m.max(v.abs()));
        converged = rn <= opts.tol * r0 || (theta == 1.0 && step <= opts.tol * scale);
    }
    let u_p = GridField::new(prob.spec, u)?;
    let w = u_p.map(|v| (v / (1.0 - prob.p)).exp())?;
    let dirichlet = (0..n).map(|i| ws.layout.fixed[i] && ws.exterior[i]).collect();
    Ok(PLapSolution {
        w,
        u_p,
        p: prob.p,
        eps: prob.eps,
        energy_history,
        residual_history,
        final_residual: rn,
        converged,
        iterations,
        inside: ws.layout.inside.clone(),
        dirichlet,
    })
}

/// Solves along a decreasing schedule of exponents, warm-starting each
/// stage from the previous one rescaled by the ratio of barrier slopes
/// `(4-p)/(4-p_prev)`.
pub fn solve_continuation(
    prob: &PLapProblem,
    schedule: &[f64],
    opts: SolveOptions,
) -> Result<Vec<PLapSolution>, PLapError> {
    if schedule.is_empty() {
        return Err(PLapError::config("schedule", "must not be empty"));
    }
    if schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(PLapError::config("schedule", "must be strictly decreasing"));
    }
    let mut out: Vec<PLapSolution> = Vec::with_capacity(schedule.len());
    for &p in schedule {
        let stage = PLapProblem { p, ..prob.clone() };
        let init = match out.last() {
            Some(prev) => {
                let k = (4.0 - p) / (4.0 - prev.p);
                Some(prev.u_p.map(|v| k * v)?)
            }
            None => None,
        };
        out.push(solve_from(&stage, init.as_ref(), opts)?);
    }
    Ok(out)
}

/// `u_p = (1-p) ln w` nodewise.
pub fn to_arrival_time(sol: &PLapSolution) -> Result<GridField, PLapError> {
    if let Some((index, &value)) = sol.w.data().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(PLapError::NonPositive { index, value });
    }
    Ok(sol.w.map(|w| (1.0 - sol.p) * w.ln())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    /// `max (u_p - (4-p) ln(d(x,x0)/r))` over `Ω_box`; positive values are
    /// violations of the upper barrier.
    pub upper_violation: f64,
    /// `max ((4-p) ln(d(x,y0)/s) - u_p)` over `Ω_box`.
    pub lower_violation: f64,
    pub nodes: usize,
}

impl SandwichReport {
    pub fn max_violation(&self) -> f64 {
        self.upper_violation.max(self.lower_violation).max(0.0)
    }
}

/// Compares `u_p` with the explicit barriers of an inner ball
/// `B_r(x0) ⊆ E0` and an outer ball `B_s(y0) ⊇ E0`.
pub fn sandwich_check(
    sol: &PLapSolution,
    inner: (HPoint, f64),
    outer: (HPoint, f64),
) -> Result<SandwichReport, PLapError> {
    let spec = sol.spec();
    let (x0, r) = inner;
    let (y0, s) = outer;
    let slack = spec.hmax();
    for i in 0..spec.len() {
        let x = spec.point(i);
        if koranyi_dist(x, x0) < r - slack && !sol.inside[i] {
            return Err(PLapError::BallConfiguration(format!("node {i} of B_r(x0) lies outside E0")));
        }
        if sol.inside[i] && koranyi_dist(x, y0) > s + slack {
            return Err(PLapError::BallConfiguration(format!("node {i} of E0 lies outside B_s(y0)")));
        }
    }
    let k = 4.0 - sol.p;
    let u = sol.u_p.data();
    let mut rep = SandwichReport { upper_violation: f64::NEG_INFINITY, lower_violation: f64::NEG_INFINITY, nodes: 0 };
    for i in 0..spec.len() {
        if sol.inside[i] {
            continue;
        }
        let x = spec.point(i);
        rep.upper_violation = rep.upper_violation.max(u[i] - k * (koranyi_dist(x, x0) / r).ln());
        rep.lower_violation = rep.lower_violation.max(k * (koranyi_dist(x, y0) / s).ln() - u[i]);
        rep.nodes += 1;
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub sup_grad0: f64,
    pub bound: f64,
    /// `bound - sup_grad0`.
    pub margin: f64,
    pub worst: HPoint,
}

/// Largest finite-difference `‖∇0u_p‖` over `Ω_box` against `(4-p)/R`.
pub fn gradient_bound_check(sol: &PLapSolution, r: f64) -> GradientReport {
    let (g1, g2) = grad0_fd(&sol.u_p);
    let spec = sol.spec();
    let mut best = (0.0f64, HPoint::IDENTITY);
    for i in 0..spec.len() {
        if sol.inside[i] {
            continue;
        }
        let g = g1.data()[i].hypot(g2.data()[i]);
        if g > best.0 {
            best = (g, spec.point(i));
        }
    }
    let bound = (4.0 - sol.p) / r;
    GradientReport { sup_grad0: best.0, bound, margin: bound - best.0, worst: best.1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxPrincipleReport {
    pub free_min: f64,
    pub free_max: f64,
    pub boundary_min: f64,
    pub boundary_max: f64,
    pub holds: bool,
}

/// Checks that `w` over the free nodes of `Ω_box` stays within the range of
/// its Dirichlet data (`w = 1` on `∂E0` and the outer data), up to a
/// relative round-off allowance `rel`.
pub fn max_principle_check(sol: &PLapSolution, rel: f64) -> MaxPrincipleReport {
    let w = sol.w.data();
    let (mut fmin, mut fmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut bmin, mut bmax) = (1.0f64, 1.0f64);
    for i in 0..w.len() {
        if sol.inside[i] {
            continue;
        }
        if sol.dirichlet[i] {
            bmin = bmin.min(w[i]);
            bmax = bmax.max(w[i]);
        } else {
            fmin = fmin.min(w[i]);
            fmax = fmax.max(w[i]);
        }
    }
    let slack = rel * bmax.abs().max(bmin.abs());
    let holds = fmin >= bmin - slack && fmax <= bmax + slack;
    MaxPrincipleReport { free_min: fmin, free_max: fmax, boundary_min: bmin, boundary_max: bmax, holds }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barrier_examples() {
        let x0 = HPoint::IDENTITY;
        let x = HPoint::new(2.0, 0.0, 0.0);
        assert!((barrier_upper(x, x0, 1.0, 2.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((barrier_upper(HPoint::new(0.0, 1.0, 0.0), x0, 1.0, 1.7).unwrap() - 1.0).abs() < 1e-15);
        assert!(barrier_upper(x, x0, 1.0, 1.0001).unwrap() < 1e-300_f64.max(1e-9));
        assert!(matches!(barrier_upper(x0, x0, 1.0, 1.5), Err(PLapError::BarrierDomain(_))));
    }

    #[test]
    fn validation_names_fields() {
        let spec = GridSpec::uniform([-2.0; 3], [2.0; 3], 9).unwrap();
        let mut prob = PLapProblem::koranyi_ball(spec, HPoint::IDENTITY, 1.0, 3.5);
        assert!(matches!(prob.validate(), Err(PLapError::Config { field, .. }) if field == "p"));
        prob.p = 1.5;
        prob.eps = 0.0;
        assert!(matches!(prob.validate(), Err(PLapError::Config { field, .. }) if field == "eps"));
    }

    #[test]
    fn constant_data_gives_constant_solution() {
        let spec = GridSpec::uniform([-2.0, -2.0, -1.5], [2.0, 2.0, 1.5], 17).unwrap();
        let prob = PLapProblem {
            p: 1.5,
            eps: 1e-6,
            spec,
            inner: InnerBoundary::unit_ball(),
            outer: OuterBc::Constant { value: 0.0 },
        };
        let init = GridField::constant(spec, 0.0);
        let sol = solve_from(&prob, Some(&init), SolveOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.w.data().iter().all(|&w| w == 1.0));
        assert!(sol.energy_history.iter().all(|e| e.abs() < 1e-20));
        assert_eq!(to_arrival_time(&sol).unwrap().max(), 0.0);
    }

    #[test]
    fn coarse_ball_solve_converges_and_respects_bounds() {
        let spec = GridSpec::uniform([-2.0, -2.0, -1.0], [2.0, 2.0, 1.0], 21).unwrap();
        let prob = PLapProblem::koranyi_ball(spec, HPoint::IDENTITY, 1.0, 1.5);
        let sol = solve(&prob, 1e-9, 40).unwrap();
        assert!(sol.converged, "{:?}", sol.residual_history);
        assert!(sol.residual_history.windows(2).all(|w| w[1] < w[0]));
        let mp = max_principle_check(&sol, 1e-9);
        assert!(mp.holds, "{mp:?}");
        let u = to_arrival_time(&sol).unwrap();
        for (a, b) in u.data().iter().zip(sol.u_p.data()) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }
}
