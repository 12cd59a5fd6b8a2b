//! Uniform grids over boxes, sampled scalar fields and their discrete
//! horizontal derivatives.
//!
//! Node `(i, j, k)` sits at `lo + (i h1, j h2, k h3)` and is stored at flat
//! index `(i n2 + j) n3 + k`, so `x3` varies fastest.

mod quadrature;

pub use quadrature::{
    crossing_gradient_scale, hperimeter, pairwise_sum, surface_integral, surface_integral_euclidean, volume, BandSpec,
    Kernel, LevelQuadrature,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heis::{HPoint, SmoothFn};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid parameter `{field}`: {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("field has {got} values but the grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value {value} at node {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("grids differ")]
    SpecMismatch,
    #[error("band around level {t} contains no nodes")]
    EmptyBand { t: f64 },
    #[error("band around level {t} reaches the box faces")]
    BandTouchesBoundary { t: f64 },
    #[error("sublevel set below {t} is clipped by the box faces")]
    DomainTruncation { t: f64 },
    #[error("full gradient vanishes at node {index} inside the band")]
    VanishingGradient { index: usize },
    #[error("band half-width must be positive and finite, got {0}")]
    BadHalfwidth(f64),
}

fn invalid(field: &str, reason: impl Into<String>) -> GridError {
    GridError::InvalidSpec { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub n: [usize; 3],
}

impl GridSpec {
    pub fn new(lo: [f64; 3], hi: [f64; 3], n: [usize; 3]) -> Result<Self, GridError> {
        let spec = Self { lo, hi, n };
        spec.validate()?;
        Ok(spec)
    }

    /// Same node count on every axis.
    pub fn uniform(lo: [f64; 3], hi: [f64; 3], n: usize) -> Result<Self, GridError> {
        Self::new(lo, hi, [n; 3])
    }

    pub fn validate(&self) -> Result<(), GridError> {
        for a in 0..3 {
            if !self.lo[a].is_finite() {
                return Err(invalid("grid.lo", format!("component {a} is not finite")));
            }
            if !self.hi[a].is_finite() {
                return Err(invalid("grid.hi", format!("component {a} is not finite")));
            }
            if !(self.hi[a] > self.lo[a]) {
                return Err(invalid("grid.hi", format!("component {a} must exceed grid.lo")));
            }
            if self.n[a] < 8 {
                return Err(invalid("grid.n", format!("need at least 8 nodes per axis, got {}", self.n[a])));
            }
            let h = (self.hi[a] - self.lo[a]) / (self.n[a] - 1) as f64;
            if !(h.is_finite() && h > 0.0) {
                return Err(invalid("grid.n", format!("spacing on axis {a} is degenerate")));
            }
        }
        Ok(())
    }

    pub fn h(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.hi[a] - self.lo[a]) / (self.n[a] - 1) as f64)
    }

    pub fn hmax(&self) -> f64 {
        let h = self.h();
        h[0].max(h[1]).max(h[2])
    }

    pub fn cell_volume(&self) -> f64 {
        let h = self.h();
        h[0] * h[1] * h[2]
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n[1] + j) * self.n[2] + k
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.n[2];
        let r = idx / self.n[2];
        [r / self.n[1], r % self.n[1], k]
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.n[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * (self.hi[axis] - self.lo[axis]) / (self.n[axis] - 1) as f64
        }
    }

    #[inline]
    pub fn point(&self, idx: usize) -> HPoint {
        let [i, j, k] = self.ijk(idx);
        HPoint::new(self.coord(0, i), self.coord(1, j), self.coord(2, k))
    }

    pub fn on_face(&self, idx: usize) -> bool {
        let c = self.ijk(idx);
        (0..3).any(|a| c[a] == 0 || c[a] + 1 == self.n[a])
    }

    pub fn contains(&self, x: HPoint) -> bool {
        let p = x.to_array();
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }

    /// Nested refinement: `2(n − 1) + 1` nodes per axis over the same box.
    pub fn refined(&self) -> Self {
        Self { n: self.n.map(|m| 2 * (m - 1) + 1), ..*self }
    }

    /// Grid on the image of the box under the dilation `δλ`.
    pub fn dilated(&self, lambda: f64) -> Self {
        let s = [lambda, lambda, lambda * lambda];
        Self { lo: std::array::from_fn(|a| s[a] * self.lo[a]), hi: std::array::from_fn(|a| s[a] * self.hi[a]), n: self.n }
    }
}

/// A scalar field with one finite value per grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    spec: GridSpec,
    data: Vec<f64>,
}

impl GridField {
    pub fn new(spec: GridSpec, data: Vec<f64>) -> Result<Self, GridError> {
        if data.len() != spec.len() {
            return Err(GridError::LengthMismatch { expected: spec.len(), got: data.len() });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { index, value });
        }
        Ok(Self { spec, data })
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        Self { spec, data: vec![c; spec.len()] }
    }

    /// Evaluates a closure at every node. Non-finite values are rejected.
    pub fn from_fn<F>(spec: GridSpec, f: F) -> Result<Self, GridError>
    where
        F: Fn(HPoint) -> f64 + Sync,
    {
        let data: Vec<f64> = (0..spec.len()).into_par_iter().map(|i| f(spec.point(i))).collect();
        Self::new(spec, data)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.spec.index(i, j, k)]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Nodewise map; the result must stay finite.
    pub fn map<F>(&self, f: F) -> Result<Self, GridError>
    where
        F: Fn(f64) -> f64 + Sync,
    {
        Self::new(self.spec, self.data.par_iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map<F>(&self, other: &GridField, f: F) -> Result<Self, GridError>
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        if self.spec != other.spec {
            return Err(GridError::SpecMismatch);
        }
        Self::new(self.spec, self.data.par_iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect())
    }

    /// Second-order difference along one axis: central in the interior and
    /// one-sided three-point at the faces.
    pub fn partial(&self, axis: usize) -> GridField {
        let s = self.spec;
        let h = s.h()[axis];
        let stride = match axis {
            0 => s.n[1] * s.n[2],
            1 => s.n[2],
            _ => 1,
        };
        let m = s.n[axis];
        let data = (0..s.len())
            .into_par_iter()
            .map(|idx| {
                let c = s.ijk(idx)[axis];
                let f = |o: isize| self.data[(idx as isize + o * stride as isize) as usize];
                if c == 0 {
                    (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
                } else if c + 1 == m {
                    (3.0 * f(0) - 4.0 * f(-1) + f(-2)) / (2.0 * h)
                } else {
                    (f(1) - f(-1)) / (2.0 * h)
                }
            })
            .collect();
        GridField { spec: s, data }
    }

    pub fn euclidean_grad(&self) -> [GridField; 3] {
        [self.partial(0), self.partial(1), self.partial(2)]
    }

    /// Trilinear interpolation; `None` outside the box.
    pub fn interpolate(&self, x: HPoint) -> Option<f64> {
        trilinear(&self.spec, &self.data, x)
    }

    /// Pullback `x ↦ self(map(x))` onto another grid, by interpolation.
    /// Fails with the first node whose image leaves the box.
    pub fn pullback<M>(&self, target: GridSpec, map: M) -> Result<GridField, usize>
    where
        M: Fn(HPoint) -> HPoint + Sync,
    {
        let vals: Vec<Option<f64>> =
            (0..target.len()).into_par_iter().map(|i| self.interpolate(map(target.point(i)))).collect();
        let mut data = Vec::with_capacity(vals.len());
        for (i, v) in vals.into_iter().enumerate() {
            data.push(v.ok_or(i)?);
        }
        Ok(GridField { spec: target, data })
    }

    /// Injection onto a grid whose nodes are a subset of this one.
    pub fn restrict_to(&self, coarse: GridSpec) -> Option<GridField> {
        let f = &self.spec;
        if f.lo != coarse.lo || f.hi != coarse.hi {
            return None;
        }
        let mut stride = [0usize; 3];
        for a in 0..3 {
            if (f.n[a] - 1) % (coarse.n[a] - 1) != 0 {
                return None;
            }
            stride[a] = (f.n[a] - 1) / (coarse.n[a] - 1);
        }
        let data = (0..coarse.len())
            .map(|i| {
                let [a, b, c] = coarse.ijk(i);
                self.at(a * stride[0], b * stride[1], c * stride[2])
            })
            .collect();
        Some(GridField { spec: coarse, data })
    }
}

/// Trilinear interpolation of nodal values laid out as in [`GridField`].
pub fn trilinear(s: &GridSpec, data: &[f64], x: HPoint) -> Option<f64> {
    let p = x.to_array();
    let h = s.h();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let r = (p[a] - s.lo[a]) / h[a];
        let last = (s.n[a] - 1) as f64;
        if !(r >= -1e-9 && r <= last + 1e-9) {
            return None;
        }
        let r = r.clamp(0.0, last);
        let b = (r.floor() as usize).min(s.n[a] - 2);
        base[a] = b;
        frac[a] = r - b as f64;
    }
    let mut v = 0.0;
    for di in 0..2 {
        let wi = if di == 0 { 1.0 - frac[0] } else { frac[0] };
        for dj in 0..2 {
            let wj = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
            for dk in 0..2 {
                let wk = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
                v += wi * wj * wk * data[s.index(base[0] + di, base[1] + dj, base[2] + dk)];
            }
        }
    }
    Some(v)
}

/// Nodewise samples of a smooth function.
pub fn sample<F: SmoothFn + Sync>(f: &F, spec: GridSpec) -> Result<GridField, GridError> {
    GridField::from_fn(spec, |x| f.value(x))
}

/// Discrete horizontal gradient `(X1u, X2u)` from second-order Euclidean
/// differences combined with the nodal frame coefficients.
pub fn grad0_fd(u: &GridField) -> (GridField, GridField) {
    let [d1, d2, d3] = u.euclidean_grad();
    horizontal_from_euclidean(&d1, &d2, &d3)
}

pub(crate) fn horizontal_from_euclidean(d1: &GridField, d2: &GridField, d3: &GridField) -> (GridField, GridField) {
    let s = *d1.spec();
    let (a, b): (Vec<f64>, Vec<f64>) = (0..s.len())
        .into_par_iter()
        .map(|i| {
            let x = s.point(i);
            (d1.data[i] - 0.5 * x.x2 * d3.data[i], d2.data[i] + 0.5 * x.x1 * d3.data[i])
        })
        .unzip();
    (GridField { spec: s, data: a }, GridField { spec: s, data: b })
}
