//! Differential geometry of level surfaces of grid fields: normals,
//! horizontal mean curvature, the flow residual `H0 − ‖∇0u‖`, the
//! functionals `J_u`, and a randomized minimizing-hull falsifier.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{crossing_gradient_scale, grad0_fd, pairwise_sum, BandSpec, GridError, GridField, GridSpec, LevelQuadrature};
use crate::heis::{koranyi_dist, HPoint, HVector, SymHess};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("every band node around level {t} is characteristic")]
    DegenerateSurface { t: f64 },
    #[error("v differs from u at node {index}, outside the mask")]
    NotContained { index: usize },
    #[error("probe ball centered at {center:?} with radius {radius} leaves the box")]
    ProbeEscapes { center: HPoint, radius: f64 },
    #[error("the set below level {t} touches the box faces")]
    NotPrecompact { t: f64 },
    #[error("at least one probe is required")]
    NoProbes,
}

/// Horizontal first and second derivatives of a field at every node.
pub struct LevelGeometry<'a> {
    pub quad: LevelQuadrature<'a>,
    hess: Vec<SymHess>,
}

impl<'a> LevelGeometry<'a> {
    /// The symmetrized horizontal Hessian comes from applying the discrete
    /// horizontal gradient twice.
    pub fn new(u: &'a GridField) -> Self {
        let (a, b) = grad0_fd(u);
        let (a1, a2) = grad0_fd(&a);
        let (b1, b2) = grad0_fd(&b);
        let hess = (0..u.spec().len())
            .into_par_iter()
            .map(|i| SymHess { h11: a1.data()[i], h12: 0.5 * (a2.data()[i] + b1.data()[i]), h22: b2.data()[i] })
            .collect();
        Self { quad: LevelQuadrature::new(u), hess }
    }

    pub fn spec(&self) -> &GridSpec {
        self.quad.field().spec()
    }

    pub fn hess(&self, idx: usize) -> SymHess {
        self.hess[idx]
    }

    /// Trace-form horizontal mean curvature; `None` when `‖∇0u‖ ≤ floor`.
    pub fn h0(&self, idx: usize, floor: f64) -> Option<f64> {
        let g = self.quad.grad0(idx);
        let n = g.norm();
        if n <= floor || n == 0.0 {
            return None;
        }
        let h = &self.hess[idx];
        Some((h.trace() - h.quad(&g) / (n * n)) / n)
    }

    /// `H0` at every node, zero where undefined.
    pub fn h0_field(&self, floor: f64) -> GridField {
        let data = (0..self.spec().len()).into_par_iter().map(|i| self.h0(i, floor).unwrap_or(0.0)).collect();
        GridField::new(*self.spec(), data).expect("finite curvature")
    }

    fn samples(&self, band: &BandSpec, with_h0: bool) -> Result<SurfaceSampleSet, GeomError> {
        let nodes = self.quad.band_nodes(band)?;
        let eta = self.quad.char_threshold(band)?;
        let cell = self.spec().cell_volume();
        let s = *self.spec();
        let out: Vec<SurfaceSample> = nodes
            .par_iter()
            .map(|&(i, w)| {
                let grad0 = self.quad.grad0(i);
                let characteristic = grad0.norm() < eta;
                let h0 = if with_h0 && !characteristic { self.h0(i, 0.0) } else { None };
                SurfaceSample {
                    index: i,
                    point: s.point(i),
                    grad0,
                    grad_full: self.quad.frame_grad(i),
                    characteristic,
                    h0,
                    weight: w * cell,
                }
            })
            .collect();
        if out.iter().all(|n| n.characteristic) {
            return Err(GeomError::DegenerateSurface { t: band.center });
        }
        Ok(SurfaceSampleSet { t: band.center, band: *band, eta_char: eta, nodes: out })
    }
}

/// One band node of a level surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSample {
    pub index: usize,
    pub point: HPoint,
    pub grad0: HVector,
    /// `(X1u, X2u, X3u)`.
    pub grad_full: [f64; 3],
    pub characteristic: bool,
    pub h0: Option<f64>,
    /// Kernel weight times the nodal cell volume.
    pub weight: f64,
}

impl SurfaceSample {
    pub fn full_norm(&self) -> f64 {
        let g = &self.grad_full;
        (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
    }

    /// Unit normal in the frame `(X1, X2, X3)`.
    pub fn nu(&self) -> [f64; 3] {
        let n = self.full_norm();
        self.grad_full.map(|c| c / n)
    }

    /// Horizontal unit normal; `None` at characteristic nodes.
    pub fn nu0(&self) -> Option<HVector> {
        if self.characteristic {
            return None;
        }
        let n = self.grad0.norm();
        Some(HVector::new(self.grad0.a / n, self.grad0.b / n))
    }

    /// `⟨ν0, ν⟩ = ‖∇0u‖ / ‖∇u‖`.
    pub fn cos_angle(&self) -> Option<f64> {
        self.nu0().map(|_| self.grad0.norm() / self.full_norm())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSampleSet {
    pub t: f64,
    pub band: BandSpec,
    pub eta_char: f64,
    pub nodes: Vec<SurfaceSample>,
}

impl SurfaceSampleSet {
    /// Fraction of the absolute band weight sitting on characteristic nodes.
    pub fn characteristic_fraction(&self) -> f64 {
        let total = self.nodes.iter().fold(0.0, |s, n| s + n.weight.abs());
        let flagged = self.nodes.iter().filter(|n| n.characteristic).fold(0.0, |s, n| s + n.weight.abs());
        if total > 0.0 {
            flagged / total
        } else {
            0.0
        }
    }

    pub fn characteristic_points(&self) -> impl Iterator<Item = HPoint> + '_ {
        self.nodes.iter().filter(|n| n.characteristic).map(|n| n.point)
    }

    /// CSV with columns `x1,x2,x3,nu1,nu2,nu3,nu01,nu02,H0,char_flag,weight`.
    /// Missing values are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x1,x2,x3,nu1,nu2,nu3,nu01,nu02,H0,char_flag,weight")?;
        for n in &self.nodes {
            let nu = n.nu();
            let (a, b) = n.nu0().map(|v| (v.a.to_string(), v.b.to_string())).unwrap_or_default();
            let h = n.h0.map(|h| h.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{a},{b},{h},{},{}",
                n.point.x1,
                n.point.x2,
                n.point.x3,
                nu[0],
                nu[1],
                nu[2],
                u8::from(n.characteristic),
                n.weight
            )?;
        }
        Ok(())
    }
}

/// Unit normals and characteristic flags on the band around level `t`.
pub fn normals(u: &GridField, band: &BandSpec, t: f64) -> Result<SurfaceSampleSet, GeomError> {
    let band = BandSpec { center: t, ..*band };
    let quad = LevelQuadrature::new(u);
    let geo = LevelGeometry { quad, hess: Vec::new() };
    geo.samples(&band, false)
}

/// Normals plus trace-form `H0` at every non-characteristic band node.
pub fn mean_curvature_h(u: &GridField, band: &BandSpec, t: f64) -> Result<SurfaceSampleSet, GeomError> {
    let band = BandSpec { center: t, ..*band };
    LevelGeometry::new(u).samples(&band, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub linf: f64,
    /// Root mean square against `|K| ‖∇0u‖`, the discrete `dσ_H` weight.
    pub l2: f64,
    pub nodes: usize,
}

impl SurfaceSampleSet {
    /// Norms of `H0 − ‖∇0u‖` over non-characteristic nodes with
    /// `‖∇0u‖ > min_grad0`.
    pub fn residual(&self, min_grad0: f64) -> ResidualNorms {
        let mut linf: f64 = 0.0;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut count = 0;
        for n in &self.nodes {
            let g = n.grad0.norm();
            let Some(h) = n.h0 else { continue };
            if g <= min_grad0 {
                continue;
            }
            let r = h - g;
            linf = linf.max(r.abs());
            let w = n.weight.abs() * g;
            num += w * r * r;
            den += w;
            count += 1;
        }
        ResidualNorms { linf, l2: if den > 0.0 { (num / den).sqrt() } else { 0.0 }, nodes: count }
    }
}

/// Sup and weighted-L² norms of `H0 − ‖∇0u‖` on the band, characteristic
/// nodes excluded.
pub fn himcf_residual(u: &GridField, band: &BandSpec, t: f64) -> Result<ResidualNorms, GeomError> {
    Ok(mean_curvature_h(u, band, t)?.residual(0.0))
}

fn nodal_grad0_norms(u: &GridField) -> Vec<f64> {
    let (a, b) = grad0_fd(u);
    a.data().par_iter().zip(b.data()).map(|(x, y)| x.hypot(*y)).collect()
}

/// `J_u^K(v) = ∫_K ‖∇0v‖ + v ‖∇0u‖ dx`, with `K = {mask > 0.5}`.
pub fn functional_ju(u: &GridField, v: &GridField, mask: &GridField) -> Result<f64, GeomError> {
    let s = *u.spec();
    if v.spec() != &s || mask.spec() != &s {
        return Err(GridError::SpecMismatch.into());
    }
    let scale = u.data().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    for i in 0..s.len() {
        if mask.data()[i] <= 0.5 && (v.data()[i] - u.data()[i]).abs() > 1e-12 * scale {
            return Err(GeomError::NotContained { index: i });
        }
    }
    let gu = nodal_grad0_norms(u);
    let gv = nodal_grad0_norms(v);
    let terms: Vec<f64> = (0..s.len())
        .map(|i| if mask.data()[i] > 0.5 { gv[i] + v.data()[i] * gu[i] } else { 0.0 })
        .collect();
    Ok(pairwise_sum(&terms) * s.cell_volume())
}

/// `J_u^K(F) = P_H(F, K) − ∫_{F∩K} ‖∇0u‖ dx` for `F = {f < t}`.
pub fn functional_ju_set(u: &GridField, f: &GridField, t: f64, band: &BandSpec, mask: &GridField) -> Result<f64, GeomError> {
    let s = *u.spec();
    if f.spec() != &s || mask.spec() != &s {
        return Err(GridError::SpecMismatch.into());
    }
    if f.data().iter().all(|&x| x >= t) {
        return Ok(0.0);
    }
    let band = BandSpec { center: t, ..*band };
    let q = LevelQuadrature::new(f);
    let per = q.band_sum(&band, |i| if mask.data()[i] > 0.5 { q.grad0(i).norm() } else { 0.0 })?;
    let gu = nodal_grad0_norms(u);
    let terms: Vec<f64> = (0..s.len())
        .map(|i| if mask.data()[i] > 0.5 { band.indicator(f.data()[i]) * gu[i] } else { 0.0 })
        .collect();
    Ok(per - pairwise_sum(&terms) * s.cell_volume())
}

/// A Korányi ball `B_r(center)` used as a hull probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeBall {
    pub center: HPoint,
    pub radius: f64,
}

impl ProbeBall {
    /// Coordinate bounding box of the ball.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let c = self.center;
        let r = self.radius;
        let dz = 0.25 * r * r + 0.5 * c.horizontal_sq().sqrt() * r;
        ([c.x1 - r, c.x2 - r, c.x3 - dz], [c.x1 + r, c.x2 + r, c.x3 + dz])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullReport {
    pub t: f64,
    pub seed: u64,
    pub base_perimeter: f64,
    pub probes: Vec<ProbeBall>,
    pub margins: Vec<f64>,
    /// Minimum of `P_H(E ∪ B) − P_H(E)` over the probes.
    pub min_margin: f64,
    /// A negative minimum certifies that `E` is not a minimizing hull.
    pub certified_non_hull: bool,
}

/// Perimeter comparison of `E = {e < t}` against `E ∪ B` for the given
/// balls. The ball enters through the field `t + s (d(x, c) − r)` with `s`
/// the crossing gradient scale of `e`, so both pieces share one band.
pub fn hull_probe_with(e: &GridField, t: f64, balls: &[ProbeBall]) -> Result<HullReport, GeomError> {
    if balls.is_empty() {
        return Err(GeomError::NoProbes);
    }
    let s = *e.spec();
    if (0..s.len()).any(|i| s.on_face(i) && e.data()[i] < t) {
        return Err(GeomError::NotPrecompact { t });
    }
    let d = e.euclidean_grad();
    let scale = crossing_gradient_scale(e, &d, t).ok_or(GridError::EmptyBand { t })?;
    let base_q = LevelQuadrature::new(e);
    let band = base_q.auto_band(t)?;
    let margin_cells = 2.0 * band.support() / scale;
    let base = base_q.hperimeter(&band)?;
    let mut margins = Vec::with_capacity(balls.len());
    for ball in balls {
        if ball.radius <= 0.0 {
            margins.push(0.0);
            continue;
        }
        let (lo, hi) = ball.bounds();
        if (0..3).any(|a| lo[a] < s.lo[a] + margin_cells || hi[a] > s.hi[a] - margin_cells) {
            return Err(GeomError::ProbeEscapes { center: ball.center, radius: ball.radius });
        }
        let f = e.zip_map(
            &GridField::from_fn(s, |x| t + scale * (koranyi_dist(x, ball.center) - ball.radius))?,
            f64::min,
        )?;
        let per = LevelQuadrature::new(&f).hperimeter(&band)?;
        margins.push(per - base);
    }
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(HullReport {
        t,
        seed: 0,
        base_perimeter: base,
        probes: balls.to_vec(),
        margins,
        min_margin,
        certified_non_hull: min_margin < 0.0,
    })
}

/// Randomized hull falsifier: `probes` balls with centers drawn from the
/// box and radii in `[0.05, 0.35]` of the smallest horizontal box extent,
/// rejected until they fit.
pub fn hull_probe(e: &GridField, t: f64, probes: usize, seed: u64) -> Result<HullReport, GeomError> {
    if probes == 0 {
        return Err(GeomError::NoProbes);
    }
    let s = *e.spec();
    let d = e.euclidean_grad();
    let scale = crossing_gradient_scale(e, &d, t).ok_or(GridError::EmptyBand { t })?;
    let band = LevelQuadrature::new(e).auto_band(t)?;
    let pad = 2.0 * band.support() / scale;
    let extent = (s.hi[0] - s.lo[0]).min(s.hi[1] - s.lo[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut balls = Vec::with_capacity(probes);
    let mut attempts = 0usize;
    while balls.len() < probes {
        attempts += 1;
        if attempts > 1000 * probes {
            return Err(GeomError::ProbeEscapes { center: HPoint::IDENTITY, radius: 0.05 * extent });
        }
        let center = HPoint::new(
            rng.gen_range(s.lo[0]..s.hi[0]),
            rng.gen_range(s.lo[1]..s.hi[1]),
            rng.gen_range(s.lo[2]..s.hi[2]),
        );
        let radius = rng.gen_range(0.05..0.35) * extent;
        let ball = ProbeBall { center, radius };
        let (lo, hi) = ball.bounds();
        if (0..3).all(|a| lo[a] >= s.lo[a] + pad && hi[a] <= s.hi[a] - pad) {
            balls.push(ball);
        }
    }
    let mut report = hull_probe_with(e, t, &balls)?;
    report.seed = seed;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::KoranyiSolution;
    use crate::grid::sample;
    use crate::heis::{koranyi_norm, GaugeDistance};

    fn spec(n: usize) -> GridSpec {
        GridSpec::uniform([-1.8, -1.8, -0.75], [1.8, 1.8, 0.75], n).unwrap()
    }

    #[test]
    fn planar_normals() {
        let s = GridSpec::uniform([-1.0; 3], [1.0; 3], 17).unwrap();
        let u = GridField::from_fn(s, |x| x.x1).unwrap();
        let band = BandSpec::auto(&u, 0.0).unwrap();
        let set = normals(&u, &band, 0.0).unwrap();
        assert!(!set.nodes.is_empty());
        for n in &set.nodes {
            assert_eq!(n.nu(), [1.0, 0.0, 0.0]);
            assert_eq!(n.nu0(), Some(HVector::new(1.0, 0.0)));
            assert_eq!(n.cos_angle(), Some(1.0));
        }
    }

    #[test]
    fn sphere_normals_and_flags() {
        let s = spec(49);
        let u = sample(&GaugeDistance::new(HPoint::IDENTITY), s).unwrap();
        let band = BandSpec::auto(&u, 1.0).unwrap();
        let set = normals(&u, &band, 1.0).unwrap();
        let h = s.h();
        for n in &set.nodes {
            if let Some(c) = n.cos_angle() {
                assert!(c > 0.0 && c <= 1.0 + 1e-12);
                assert!((c - n.grad0.norm() / n.full_norm()).abs() < 1e-15);
            }
        }
        let flagged: Vec<HPoint> = set.characteristic_points().collect();
        assert!(!flagged.is_empty());
        for p in flagged {
            assert!(p.x1.abs() <= 2.0 * h[0] && p.x2.abs() <= 2.0 * h[1]);
            assert!((p.x3.abs() - 0.25).abs() <= 2.0 * h[2] + band.support() * 0.5);
        }
    }

    #[test]
    fn equator_curvature() {
        let s = GridSpec::uniform([-1.6, -1.6, -0.6], [1.6, 1.6, 0.6], 65).unwrap();
        let i = s.index(52, 32, 32);
        assert!((s.point(i).x1 - 1.0).abs() < 1e-12);
        let ue = GridField::from_fn(s, |x| 0.75 * crate::heis::rho(x).max(1e-12).ln()).unwrap();
        let g = LevelGeometry::new(&ue);
        assert!((g.h0(i, 0.0).unwrap() - 3.0).abs() < 0.05);
        let ug = sample(&GaugeDistance::new(HPoint::IDENTITY), s).unwrap();
        let g = LevelGeometry::new(&ug);
        assert!((g.h0(i, 0.0).unwrap() - 3.0).abs() < 0.05);
        // The gauge itself is not an arrival time: H0 − ‖∇0u‖ ≈ 3 − 1.
        assert!((g.h0(i, 0.0).unwrap() - g.quad.grad0(i).norm() - 2.0).abs() < 0.05);
    }

    #[test]
    fn exact_residual_small_away_from_axis() {
        let s = spec(48);
        let u = sample(&KoranyiSolution, s).unwrap();
        let band = BandSpec::auto(&u, 0.0).unwrap();
        let set = mean_curvature_h(&u, &band, 0.0).unwrap();
        let r = set.residual(0.25);
        assert!(r.nodes > 100);
        assert!(r.linf < 0.5 && r.l2 < 0.05, "{r:?}");
        assert!(r.l2 < r.linf);
        let ug = sample(&GaugeDistance::new(HPoint::IDENTITY), s).unwrap();
        let band = BandSpec::auto(&ug, 1.0).unwrap();
        assert!(himcf_residual(&ug, &band, 1.0).unwrap().linf > 1.0);
    }

    #[test]
    fn curvature_scales_under_dilation() {
        let s = spec(48);
        let lambda = 1.5;
        let sl = s.dilated(lambda);
        let u = sample(&KoranyiSolution, s).unwrap();
        let ul = GridField::from_fn(sl, |x| KoranyiSolution.u(crate::heis::dilate(1.0 / lambda, x).unwrap())).unwrap();
        let (g, gl) = (LevelGeometry::new(&u), LevelGeometry::new(&ul));
        for idx in [s.index(37, 24, 24), s.index(30, 31, 20), s.index(12, 20, 30)] {
            let a = g.h0(idx, 0.0).unwrap();
            let b = gl.h0(idx, 0.0).unwrap();
            assert!((b * lambda / a - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_export() {
        let s = spec(24);
        let u = sample(&GaugeDistance::new(HPoint::IDENTITY), s).unwrap();
        let band = BandSpec::auto(&u, 1.0).unwrap();
        let set = mean_curvature_h(&u, &band, 1.0).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,x2,x3,nu1,nu2,nu3,nu01,nu02,H0,char_flag,weight\n"));
        assert_eq!(text.lines().count(), set.nodes.len() + 1);
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == 11));
    }

    fn shell_mask(s: GridSpec) -> GridField {
        GridField::from_fn(s, |x| {
            let g = koranyi_norm(x);
            if g > 0.9 && g < 1.7 { 1.0 } else { 0.0 }
        })
        .unwrap()
    }

    #[test]
    fn ju_constant_shift_and_containment() {
        let s = spec(32);
        let u = sample(&KoranyiSolution, GridSpec { ..s }).unwrap();
        let all = GridField::constant(s, 1.0);
        let c = 0.3;
        let v = u.map(|x| x + c).unwrap();
        let base = functional_ju(&u, &u, &all).unwrap();
        let shifted = functional_ju(&u, &v, &all).unwrap();
        let g = nodal_grad0_norms(&u);
        let expect = c * pairwise_sum(&g) * s.cell_volume();
        assert!(((shifted - base) / expect - 1.0).abs() < 1e-10);
        let mask = shell_mask(s);
        assert!(matches!(functional_ju(&u, &v, &mask), Err(GeomError::NotContained { .. })));
    }

    #[test]
    fn ju_set_of_empty_is_zero() {
        let s = spec(24);
        let u = sample(&KoranyiSolution, s).unwrap();
        let f = GridField::constant(s, 5.0);
        let band = BandSpec::new(1.0, 0.1).unwrap();
        assert_eq!(functional_ju_set(&u, &f, 1.0, &band, &GridField::constant(s, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn hull_probe_trivial_and_errors() {
        let s = spec(32);
        let e = sample(&GaugeDistance::new(HPoint::IDENTITY), s).unwrap();
        let r = hull_probe_with(&e, 1.0, &[ProbeBall { center: HPoint::IDENTITY, radius: 0.0 }]).unwrap();
        assert_eq!(r.min_margin, 0.0);
        assert!(!r.certified_non_hull);
        let far = ProbeBall { center: HPoint::new(1.7, 0.0, 0.0), radius: 0.5 };
        assert!(matches!(hull_probe_with(&e, 1.0, &[far]), Err(GeomError::ProbeEscapes { .. })));
        assert!(matches!(hull_probe(&e, 1.0, 0, 1), Err(GeomError::NoProbes)));
        assert!(matches!(hull_probe_with(&e, 5.0, &[far]), Err(GeomError::NotPrecompact { .. })));
    }
}
