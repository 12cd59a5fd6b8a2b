//! Dirichlet node classes and ghost-node extrapolation across `∂E0`.
//!
//! Nodes inside `E0` that share an element with the exterior carry ghost
//! values: the solution is fitted by `u(σ) = aσ + bσ²` along the outward
//! normal through the boundary foot point (where `u = 0`) using two
//! interpolated probes, and the fit is evaluated at the ghost's signed
//! distance.

use serde::{Deserialize, Serialize};

use crate::grid::{trilinear, GridField, GridSpec};
use crate::heis::{dilate, koranyi_dist, GaugeDistance, HPoint, SmoothFn};

use super::PLapError;

/// Description of the initial set `E0 = {φ < 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InnerBoundary {
    KoranyiBall { center: HPoint, radius: f64 },
    /// A level-set field on the solver grid, negative inside `E0`.
    Field { field: GridField },
}

impl InnerBoundary {
    pub fn unit_ball() -> Self {
        Self::KoranyiBall { center: HPoint::IDENTITY, radius: 1.0 }
    }

    pub fn validate(&self) -> Result<(), PLapError> {
        match self {
            Self::KoranyiBall { center, radius } => {
                if !center.is_finite() {
                    return Err(PLapError::config("inner.center", "must be finite"));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(PLapError::config("inner.radius", "must be positive"));
                }
            }
            Self::Field { field } => {
                if field.min() >= 0.0 {
                    return Err(PLapError::config("inner.field", "level-set field has no interior"));
                }
            }
        }
        Ok(())
    }

    /// Image of `E0` under `δλ`. Field descriptions are carried over to the
    /// dilated grid node by node.
    pub fn dilated(&self, lambda: f64) -> Self {
        match self {
            Self::KoranyiBall { center, radius } => {
                Self::KoranyiBall { center: dilate(lambda, *center).unwrap_or(*center), radius: lambda * radius }
            }
            Self::Field { field } => {
                let spec = field.spec().dilated(lambda);
                Self::Field { field: GridField::new(spec, field.data().to_vec()).expect("same data") }
            }
        }
    }

    /// Nodal level-set values and Euclidean gradients on `spec`.
    pub(crate) fn nodal(&self, spec: &GridSpec) -> Result<(Vec<f64>, Vec<[f64; 3]>), PLapError> {
        match self {
            Self::KoranyiBall { center, radius } => {
                let g = GaugeDistance::new(*center);
                let phi = (0..spec.len()).map(|i| koranyi_dist(spec.point(i), *center) - radius).collect();
                let grad = (0..spec.len()).map(|i| g.partials(spec.point(i))).collect();
                Ok((phi, grad))
            }
            Self::Field { field } => {
                if field.spec() != spec {
                    return Err(PLapError::config("inner.field", "grid differs from the solver grid"));
                }
                let [d1, d2, d3] = field.euclidean_grad();
                let grad = (0..spec.len()).map(|i| [d1.data()[i], d2.data()[i], d3.data()[i]]).collect();
                Ok((field.data().to_vec(), grad))
            }
        }
    }

    /// Level-set field of `E0` on a grid.
    pub fn level_field(&self, spec: &GridSpec) -> Result<GridField, PLapError> {
        let (phi, _) = self.nodal(spec)?;
        Ok(GridField::new(*spec, phi)?)
    }
}

#[derive(Debug, Clone, Copy)]
struct Ghost {
    idx: usize,
    dist: f64,
    p1: HPoint,
    p2: HPoint,
    l1: f64,
    l2: f64,
}

/// Node classification for one problem on one grid.
#[derive(Debug, Clone)]
pub struct Layout {
    pub spec: GridSpec,
    /// Nodes whose values are not unknowns.
    pub fixed: Vec<bool>,
    pub inside: Vec<bool>,
    ghosts: Vec<Ghost>,
    deep: Vec<usize>,
}

impl Layout {
    /// `extra_fixed` marks additional exterior Dirichlet nodes.
    pub fn new(spec: GridSpec, inner: &InnerBoundary, extra_fixed: impl Fn(HPoint) -> bool) -> Result<Self, PLapError> {
        let (phi, grad) = inner.nodal(&spec)?;
        let n = spec.len();
        let inside: Vec<bool> = phi.iter().map(|&v| v <= 0.0).collect();
        if (0..n).any(|i| inside[i] && spec.on_face(i)) {
            return Err(PLapError::config("inner", "E0 must lie strictly inside the box"));
        }
        let mut fixed: Vec<bool> = (0..n).map(|i| inside[i] || spec.on_face(i) || extra_fixed(spec.point(i))).collect();
        if !(0..n).any(|i| !fixed[i]) {
            return Err(PLapError::config("grid", "no unknown nodes remain"));
        }
        // Inside nodes sharing an element with an exterior node.
        let mut touches = vec![false; n];
        for i in 0..n {
            if inside[i] {
                continue;
            }
            let c = spec.ijk(i);
            for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    for dk in -1isize..=1 {
                        let q = [c[0] as isize + di, c[1] as isize + dj, c[2] as isize + dk];
                        if (0..3).all(|a| q[a] >= 0 && q[a] < spec.n[a] as isize) {
                            let j = spec.index(q[0] as usize, q[1] as usize, q[2] as usize);
                            if inside[j] {
                                touches[j] = true;
                            }
                        }
                    }
                }
            }
        }
        let h = spec.h();
        let mut ghosts = Vec::new();
        let mut deep = Vec::new();
        for i in 0..n {
            if !inside[i] {
                continue;
            }
            if !touches[i] {
                deep.push(i);
                continue;
            }
            let g = grad[i];
            let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if !(gn > 0.0) {
                return Err(PLapError::config("inner", "level-set gradient vanishes at a boundary node"));
            }
            let nrm = g.map(|c| c / gn);
            let dist = -phi[i] / gn;
            let hd: f64 = (0..3).map(|a| nrm[a].abs() * h[a]).sum();
            let (l1, l2) = (1.5 * hd, 3.0 * hd);
            let x = spec.point(i).to_array();
            let at = |l: f64| HPoint::from_array(std::array::from_fn(|a| x[a] + (dist + l) * nrm[a]));
            let (p1, p2) = (at(l1), at(l2));
            if !spec.contains(p2) {
                return Err(PLapError::config("inner", "E0 is too close to the box faces"));
            }
            ghosts.push(Ghost { idx: i, dist, p1, p2, l1, l2 });
        }
        for i in 0..n {
            if extra_fixed(spec.point(i)) && inside[i] {
                fixed[i] = true;
            }
        }
        Ok(Self { spec, fixed, inside, ghosts, deep })
    }

    pub fn ghost_count(&self) -> usize {
        self.ghosts.len()
    }

    pub fn is_ghost(&self) -> Vec<bool> {
        let mut v = vec![false; self.spec.len()];
        for g in &self.ghosts {
            v[g.idx] = true;
        }
        v
    }

    /// Recomputes ghost values from the current exterior solution and fills
    /// the deep interior with the smallest ghost value.
    pub fn update_ghosts(&self, u: &mut [f64]) {
        let vals: Vec<f64> = self
            .ghosts
            .iter()
            .map(|g| {
                let u1 = trilinear(&self.spec, u, g.p1).unwrap_or(0.0);
                let u2 = trilinear(&self.spec, u, g.p2).unwrap_or(0.0);
                let b = (u2 / g.l2 - u1 / g.l1) / (g.l2 - g.l1);
                let a = u1 / g.l1 - b * g.l1;
                -a * g.dist + b * g.dist * g.dist
            })
            .collect();
        let mut lowest: f64 = 0.0;
        for (g, v) in self.ghosts.iter().zip(vals) {
            u[g.idx] = v;
            lowest = lowest.min(v);
        }
        for &i in &self.deep {
            u[i] = lowest;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ghost_error(n: usize) -> f64 {
        let spec = GridSpec::uniform([-2.0, -2.0, -1.0], [2.0, 2.0, 1.0], n).unwrap();
        let lay = Layout::new(spec, &InnerBoundary::unit_ball(), |_| false).unwrap();
        assert!(lay.ghost_count() > 0);
        let dep = lay.ghosts.iter().map(|g| g.dist).fold(0.0, f64::max);
        assert!(dep < 2.0 * spec.hmax());
        let mut u: Vec<f64> = (0..spec.len()).map(|i| koranyi_dist(spec.point(i), HPoint::IDENTITY) - 1.0).collect();
        let exact = u.clone();
        lay.update_ghosts(&mut u);
        lay.ghosts.iter().map(|g| (u[g.idx] - exact[g.idx]).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn ghost_extrapolation_converges() {
        let (e1, e2) = (ghost_error(33), ghost_error(65));
        assert!(e2 < 0.5 * e1, "{e1} {e2}");
    }

    #[test]
    fn rejects_sets_touching_faces() {
        let spec = GridSpec::uniform([-1.0; 3], [1.0; 3], 17).unwrap();
        let inner = InnerBoundary::KoranyiBall { center: HPoint::IDENTITY, radius: 1.2 };
        assert!(Layout::new(spec, &inner, |_| false).is_err());
        let bad = InnerBoundary::KoranyiBall { center: HPoint::IDENTITY, radius: -1.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dilation_of_descriptions() {
        let b = InnerBoundary::KoranyiBall { center: HPoint::new(1.0, 0.0, 1.0), radius: 0.5 };
        assert_eq!(
            b.dilated(2.0),
            InnerBoundary::KoranyiBall { center: HPoint::new(2.0, 0.0, 4.0), radius: 1.0 }
        );
    }
}
