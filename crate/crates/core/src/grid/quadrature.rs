//! Narrow-band coarea quadrature of level-surface integrals and smoothed
//! indicator volumes.
//!
//! A surface integral `∫_{u = t} φ dσ_H` is approximated by the bulk sum
//! `Σ K(u − t) φ ‖∇0u‖ h1h2h3`, where `K` is a kernel of unit mass
//! supported near the level. The default kernel is a raised cosine of
//! half-width `δ` combined with its `2δ` copy so that the second moment
//! vanishes; this removes the `O(δ²)` layer bias.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GridError, GridField};
use crate::heis::HVector;

/// Relative characteristic threshold: nodes with `‖∇0u‖` below this multiple
/// of the band median of `‖∇u‖` are treated as characteristic.
pub const CHAR_RELATIVE: f64 = 1e-3;

/// Default band half-width in cells, scaled by the local gradient.
pub const BAND_CELLS: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Box kernel `1/(2δ)` on `|u − t| < δ`.
    Hard,
    /// Raised cosine `(1 + cos(π s))/(2δ)`.
    Cosine,
    /// `(4 K_δ − K_{2δ})/3` with the raised cosine; support `2δ`.
    #[default]
    CosineRichardson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub center: f64,
    pub halfwidth: f64,
    #[serde(default)]
    pub kernel: Kernel,
}

fn cosine(s: f64, delta: f64) -> f64 {
    if s.abs() < 1.0 {
        (1.0 + (std::f64::consts::PI * s).cos()) / (2.0 * delta)
    } else {
        0.0
    }
}

// C¹ ramp from 0 at s = −1 to 1 at s = 1.
fn ramp(s: f64) -> f64 {
    if s <= -1.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        0.5 + 0.5 * s + (std::f64::consts::PI * s).sin() / (2.0 * std::f64::consts::PI)
    }
}

impl BandSpec {
    pub fn new(center: f64, halfwidth: f64) -> Result<Self, GridError> {
        if !(halfwidth > 0.0 && halfwidth.is_finite()) {
            return Err(GridError::BadHalfwidth(halfwidth));
        }
        Ok(Self { center, halfwidth, kernel: Kernel::default() })
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    /// Default band: `δ = 1.5 · max(h) · (median ‖∇u‖ at the level crossing)`.
    pub fn auto(u: &GridField, t: f64) -> Result<Self, GridError> {
        let d = u.euclidean_grad();
        let scale = crossing_gradient_scale(u, &d, t).ok_or(GridError::EmptyBand { t })?;
        Self::new(t, BAND_CELLS * u.spec().hmax() * scale)
    }

    /// Distance from the center beyond which the kernel vanishes.
    pub fn support(&self) -> f64 {
        match self.kernel {
            Kernel::CosineRichardson => 2.0 * self.halfwidth,
            _ => self.halfwidth,
        }
    }

    pub fn weight(&self, value: f64) -> f64 {
        let d = self.halfwidth;
        let s = (value - self.center) / d;
        match self.kernel {
            Kernel::Hard => {
                if s.abs() < 1.0 {
                    0.5 / d
                } else {
                    0.0
                }
            }
            Kernel::Cosine => cosine(s, d),
            Kernel::CosineRichardson => (4.0 * cosine(s, d) - cosine(0.5 * s, 2.0 * d)) / 3.0,
        }
    }

    /// Smoothed indicator of `{value < center}` with ramp width `halfwidth`.
    pub fn indicator(&self, value: f64) -> f64 {
        let s = (self.center - value) / self.halfwidth;
        match self.kernel {
            Kernel::CosineRichardson => (4.0 * ramp(s) - ramp(0.5 * s)) / 3.0,
            _ => ramp(s),
        }
    }

    pub fn doubled(&self) -> Self {
        Self { halfwidth: 2.0 * self.halfwidth, ..*self }
    }
}

// Trapezoidal node weight relative to a full cell.
fn face_factor(s: &super::GridSpec, idx: usize) -> f64 {
    let c = s.ijk(idx);
    (0..3).fold(1.0, |f, a| if c[a] == 0 || c[a] + 1 == s.n[a] { 0.5 * f } else { f })
}

/// Deterministic pairwise summation with a fixed midpoint reduction tree.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 128;
    const PAR: usize = 1 << 15;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    if xs.len() >= PAR {
        let (sa, sb) = rayon::join(|| pairwise_sum(a), || pairwise_sum(b));
        sa + sb
    } else {
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let m = v.len() / 2;
    let (_, x, _) = v.select_nth_unstable_by(m, f64::total_cmp);
    Some(*x)
}

/// Median Euclidean gradient norm over the nodes of grid edges crossed by
/// the level `t`. `None` when the level is not crossed.
pub fn crossing_gradient_scale(u: &GridField, d: &[GridField; 3], t: f64) -> Option<f64> {
    let s = *u.spec();
    let strides = [s.n[1] * s.n[2], s.n[2], 1];
    let v = u.data();
    let norms: Vec<f64> = (0..s.len())
        .into_par_iter()
        .filter(|&i| {
            let c = s.ijk(i);
            (0..3).any(|a| {
                let up = c[a] + 1 < s.n[a] && (v[i] - t) * (v[i + strides[a]] - t) <= 0.0;
                let down = c[a] > 0 && (v[i] - t) * (v[i - strides[a]] - t) <= 0.0;
                up || down
            })
        })
        .map(|i| (d[0].data()[i].powi(2) + d[1].data()[i].powi(2) + d[2].data()[i].powi(2)).sqrt())
        .collect();
    median(norms).filter(|m| *m > 0.0)
}

/// Cached Euclidean derivatives of a level-set field, shared by all band
/// quadratures of that field.
pub struct LevelQuadrature<'a> {
    u: &'a GridField,
    d: [GridField; 3],
}

impl<'a> LevelQuadrature<'a> {
    pub fn new(u: &'a GridField) -> Self {
        Self { u, d: u.euclidean_grad() }
    }

    pub fn field(&self) -> &GridField {
        self.u
    }

    pub fn partials(&self) -> &[GridField; 3] {
        &self.d
    }

    pub fn auto_band(&self, t: f64) -> Result<BandSpec, GridError> {
        let scale = crossing_gradient_scale(self.u, &self.d, t).ok_or(GridError::EmptyBand { t })?;
        BandSpec::new(t, BAND_CELLS * self.u.spec().hmax() * scale)
    }

    /// `(X1u, X2u)` at a node.
    #[inline]
    pub fn grad0(&self, idx: usize) -> HVector {
        let x = self.u.spec().point(idx);
        let d3 = self.d[2].data()[idx];
        HVector::new(self.d[0].data()[idx] - 0.5 * x.x2 * d3, self.d[1].data()[idx] + 0.5 * x.x1 * d3)
    }

    /// Components `(X1u, X2u, X3u)` in the left-invariant frame.
    #[inline]
    pub fn frame_grad(&self, idx: usize) -> [f64; 3] {
        let g = self.grad0(idx);
        [g.a, g.b, self.d[2].data()[idx]]
    }

    /// Gradient norm in the metric making `X1, X2, X3` orthonormal.
    #[inline]
    pub fn frame_norm(&self, idx: usize) -> f64 {
        let g = self.frame_grad(idx);
        (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
    }

    /// Nodes carrying nonzero kernel weight, with that weight.
    pub fn band_nodes(&self, band: &BandSpec) -> Result<Vec<(usize, f64)>, GridError> {
        let s = *self.u.spec();
        let lo = band.center - band.support();
        let hi = band.center + band.support();
        let nodes: Vec<(usize, f64)> = self
            .u
            .data()
            .par_iter()
            .enumerate()
            .filter(|(_, &v)| v > lo && v < hi)
            .map(|(i, &v)| (i, band.weight(v)))
            .filter(|&(_, w)| w != 0.0)
            .collect();
        if nodes.is_empty() {
            return Err(GridError::EmptyBand { t: band.center });
        }
        if nodes.iter().any(|&(i, _)| self.clipped_at(i)) {
            return Err(GridError::BandTouchesBoundary { t: band.center });
        }
        Ok(nodes.into_iter().map(|(i, w)| (i, w * face_factor(&s, i))).collect())
    }

    // A face node clips the band when the level surface there faces the
    // wall more than it runs along it.
    fn clipped_at(&self, idx: usize) -> bool {
        let s = self.u.spec();
        let c = s.ijk(idx);
        let g: [f64; 3] = std::array::from_fn(|a| self.d[a].data()[idx]);
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        (0..3).any(|a| (c[a] == 0 || c[a] + 1 == s.n[a]) && g[a].abs() > 0.5 * norm)
    }

    /// `η_char` for a band: a fixed fraction of the band median of `‖∇u‖`.
    pub fn char_threshold(&self, band: &BandSpec) -> Result<f64, GridError> {
        let nodes = self.band_nodes(band)?;
        let m = median(nodes.iter().map(|&(i, _)| self.frame_norm(i)).collect()).unwrap_or(0.0);
        Ok(CHAR_RELATIVE * m)
    }

    /// Kernel-weighted sum `Σ K(u_i − t) f(i) h1h2h3` over band nodes.
    pub fn band_sum<F>(&self, band: &BandSpec, f: F) -> Result<f64, GridError>
    where
        F: Fn(usize) -> f64 + Sync,
    {
        let nodes = self.band_nodes(band)?;
        let terms: Vec<f64> = nodes.par_iter().map(|&(i, w)| w * f(i)).collect();
        Ok(pairwise_sum(&terms) * self.u.spec().cell_volume())
    }

    pub fn hperimeter(&self, band: &BandSpec) -> Result<f64, GridError> {
        self.band_sum(band, |i| self.grad0(i).norm())
    }

    /// `∫ φ dσ_H`; characteristic nodes contribute nothing.
    pub fn surface_integral(&self, band: &BandSpec, phi: &GridField) -> Result<f64, GridError> {
        if phi.spec() != self.u.spec() {
            return Err(GridError::SpecMismatch);
        }
        let eta = self.char_threshold(band)?;
        self.band_sum(band, |i| {
            let g = self.grad0(i).norm();
            if g < eta {
                0.0
            } else {
                phi.data()[i] * g
            }
        })
    }

    /// `∫ φ dH²` with area measured in the frame-orthonormal metric.
    pub fn surface_integral_euclidean(&self, band: &BandSpec, phi: &GridField) -> Result<f64, GridError> {
        if phi.spec() != self.u.spec() {
            return Err(GridError::SpecMismatch);
        }
        if let Some(&(index, _)) = self.band_nodes(band)?.iter().find(|&&(i, _)| self.frame_norm(i) == 0.0) {
            return Err(GridError::VanishingGradient { index });
        }
        self.band_sum(band, |i| phi.data()[i] * self.frame_norm(i))
    }

    /// Smoothed-indicator volume of `{u < t}` with ramp width `ε = δ` of the
    /// default band.
    pub fn volume(&self, t: f64) -> Result<f64, GridError> {
        let v = self.u.data();
        if v.iter().all(|&x| x >= t) {
            return Ok(0.0);
        }
        let ramp = self.auto_band(t).map_err(|e| match e {
            GridError::EmptyBand { t } => GridError::DomainTruncation { t },
            e => e,
        })?;
        self.volume_with(&ramp)
    }

    pub fn volume_with(&self, ramp: &BandSpec) -> Result<f64, GridError> {
        let s = *self.u.spec();
        let chi: Vec<f64> = self.u.data().par_iter().map(|&v| ramp.indicator(v)).collect();
        if (0..s.len()).any(|i| chi[i] != 0.0 && s.on_face(i)) {
            return Err(GridError::DomainTruncation { t: ramp.center });
        }
        Ok(pairwise_sum(&chi) * s.cell_volume())
    }
}

/// Smoothed-indicator volume of `{u < t}`.
pub fn volume(u: &GridField, t: f64) -> Result<f64, GridError> {
    LevelQuadrature::new(u).volume(t)
}

/// Coarea band estimate of the H-perimeter of `{u < t}`.
pub fn hperimeter(u: &GridField, band: &BandSpec) -> Result<f64, GridError> {
    LevelQuadrature::new(u).hperimeter(band)
}

/// Coarea band estimate of `∫_{u = t} φ dσ_H`.
pub fn surface_integral(u: &GridField, band: &BandSpec, phi: &GridField) -> Result<f64, GridError> {
    LevelQuadrature::new(u).surface_integral(band, phi)
}

/// Coarea band estimate of `∫_{u = t} φ dH²`.
pub fn surface_integral_euclidean(u: &GridField, band: &BandSpec, phi: &GridField) -> Result<f64, GridError> {
    LevelQuadrature::new(u).surface_integral_euclidean(band, phi)
}
