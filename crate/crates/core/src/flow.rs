//! The weak flow as the `p → 1` limit of p-harmonic arrival times, and the
//! growth, scaling and integral identities of its level sets.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{mean_curvature_h, GeomError, LevelGeometry};
use crate::grid::{trilinear, BandSpec, GridError, GridField, GridSpec, LevelQuadrature};
use crate::heis::{dilate, koranyi_dist, rho, HPoint};
use crate::plap::{
    solve_continuation, InnerBoundary, OuterBc, PLapError, PLapProblem, PLapSolution, SolutionMeta, SolveOptions,
    DEFAULT_EPS,
};

/// Continuation exponents used when none are given.
pub const DEFAULT_SCHEDULE: [f64; 5] = [2.0, 1.5, 1.2, 1.1, 1.05];

/// Largest share of band weight on characteristic nodes for which the
/// Minkowski identity is still considered reliable.
pub const MAX_CHAR_FRACTION: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    PLap(#[from] PLapError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("a fit needs at least two levels, got {0}")]
    DegenerateFit(usize),
    #[error("initial sets are not nested at node {0}")]
    InitialInclusion(usize),
    #[error("rescaled level {t} needs values outside the box")]
    PullbackEscapes { t: f64 },
    #[error("non-positive mean curvature {value} at node {index}")]
    NonPositiveH0 { index: usize, value: f64 },
}

/// Arrival-time field of the flow from `E0` together with the continuation
/// history that produced it.
#[derive(Debug, Clone)]
pub struct LevelSetSolution {
    pub u: GridField,
    pub p_schedule: Vec<f64>,
    /// Final discrete residual of the regularized equation at each exponent.
    pub per_p_residuals: Vec<f64>,
    pub e0: InnerBoundary,
    pub converged: bool,
    /// Solver output at every exponent of the schedule.
    pub stages: Vec<PLapSolution>,
}

impl LevelSetSolution {
    pub fn stage(&self, p: f64) -> Option<&PLapSolution> {
        self.stages.iter().find(|s| (s.p - p).abs() < 1e-12)
    }

    pub fn inside(&self) -> &[bool] {
        &self.stages.last().expect("at least one stage").inside
    }

    pub fn metadata(&self) -> Vec<SolutionMeta> {
        self.stages.iter().map(PLapSolution::meta).collect()
    }
}

fn check_schedule(schedule: &[f64]) -> Result<(), FlowError> {
    if schedule.is_empty() {
        return Err(FlowError::Schedule("empty".into()));
    }
    if let Some(p) = schedule.iter().find(|p| !(**p > 1.0 && **p < 3.0)) {
        return Err(FlowError::Schedule(format!("exponent {p} outside (1, 3)")));
    }
    if schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(FlowError::Schedule("exponents must decrease strictly".into()));
    }
    Ok(())
}

/// Default outer data for `E0`: the lower barrier of the smallest
/// identity-centered gauge ball containing the grid nodes of `E0`.
pub fn default_outer(e0: &InnerBoundary, spec: &GridSpec) -> Result<OuterBc, FlowError> {
    Ok(match e0 {
        InnerBoundary::KoranyiBall { center, radius } => {
            OuterBc::BarrierMatched { y0: *center, s: *radius, clamp_beyond: None }
        }
        InnerBoundary::Field { .. } => {
            let phi = e0.level_field(spec)?;
            let s = (0..spec.len())
                .filter(|&i| phi.data()[i] <= 0.0)
                .map(|i| koranyi_dist(spec.point(i), HPoint::IDENTITY))
                .fold(0.0f64, f64::max);
            OuterBc::BarrierMatched { y0: HPoint::IDENTITY, s: s.max(spec.hmax()), clamp_beyond: None }
        }
    })
}

/// Runs the p-continuation for `E0` on `grid` and returns the arrival time
/// of the last exponent. Stages that fail to converge leave
/// `converged = false` but still return their best iterate.
pub fn himcf_solve(
    e0: &InnerBoundary,
    grid: GridSpec,
    schedule: &[f64],
    tol: f64,
) -> Result<LevelSetSolution, FlowError> {
    let outer = default_outer(e0, &grid)?;
    let prob = PLapProblem { p: schedule.first().copied().unwrap_or(2.0), eps: DEFAULT_EPS, spec: grid, inner: e0.clone(), outer };
    himcf_solve_problem(&prob, schedule, SolveOptions { tol, ..SolveOptions::default() })
}

/// As [`himcf_solve`] with explicit solver data; `prob.p` is ignored.
pub fn himcf_solve_problem(
    prob: &PLapProblem,
    schedule: &[f64],
    opts: SolveOptions,
) -> Result<LevelSetSolution, FlowError> {
    check_schedule(schedule)?;
    let stages = solve_continuation(prob, schedule, opts)?;
    let last = stages.last().expect("non-empty schedule");
    Ok(LevelSetSolution {
        u: last.u_p.clone(),
        p_schedule: schedule.to_vec(),
        per_p_residuals: stages.iter().map(|s| s.final_residual).collect(),
        e0: prob.inner.clone(),
        converged: stages.iter().all(|s| s.converged),
        stages,
    })
}

/// Samples `(3/4) ln ρ` on a grid, with `ρ` floored so that a node at the
/// identity stays finite.
pub fn exact_field(spec: GridSpec) -> GridField {
    GridField::from_fn(spec, |x| 0.75 * rho(x).max(1e-12).ln()).expect("finite after flooring")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub t: f64,
    pub volume: f64,
    pub hperimeter: f64,
    pub log_perimeter: f64,
    pub residual_linf: f64,
    pub char_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub rows: Vec<FlowRow>,
}

impl FlowReport {
    pub const HEADER: &'static str = "t,volume,hperimeter,log_perimeter,residual_linf,char_fraction";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.t, r.volume, r.hperimeter, r.log_perimeter, r.residual_linf, r.char_fraction)?;
        }
        Ok(())
    }

    /// Times increase strictly and every entry is finite.
    pub fn is_well_formed(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].t < w[1].t)
            && self.rows.iter().all(|r| {
                [r.t, r.volume, r.hperimeter, r.log_perimeter, r.residual_linf, r.char_fraction]
                    .iter()
                    .all(|v| v.is_finite())
            })
    }
}

fn flow_row(u: &GridField, geo: &LevelGeometry, t: f64) -> Result<FlowRow, FlowError> {
    let band = geo.quad.auto_band(t)?;
    let per = geo.quad.hperimeter(&band)?;
    let volume = geo.quad.volume(t)?;
    let samples = mean_curvature_h(u, &band, t)?;
    let res = samples.residual(0.0);
    Ok(FlowRow {
        t,
        volume,
        hperimeter: per,
        log_perimeter: per.ln(),
        residual_linf: res.linf,
        char_fraction: samples.characteristic_fraction(),
    })
}

fn escapes(e: &FlowError) -> bool {
    matches!(
        e,
        FlowError::Grid(GridError::BandTouchesBoundary { .. } | GridError::DomainTruncation { .. } | GridError::EmptyBand { .. })
            | FlowError::Geom(GeomError::Grid(
                GridError::BandTouchesBoundary { .. } | GridError::DomainTruncation { .. } | GridError::EmptyBand { .. }
            ))
    )
}

/// Least-squares line through `(x, y)`: slope, intercept and `r²`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Set when levels whose band left the box were dropped.
    pub truncated: bool,
    pub report: FlowReport,
}

/// Fits `log P_H(E_t)` against `t`. Levels from the first one whose band
/// leaves the box onward are dropped and flagged.
pub fn perimeter_growth(u: &GridField, t_grid: &[f64]) -> Result<GrowthFit, FlowError> {
    if t_grid.len() < 2 {
        return Err(FlowError::DegenerateFit(t_grid.len()));
    }
    let geo = LevelGeometry::new(u);
    let results: Vec<Result<FlowRow, FlowError>> = t_grid.par_iter().map(|&t| flow_row(u, &geo, t)).collect();
    let mut rows = Vec::new();
    let mut truncated = false;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) if escapes(&e) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if rows.len() < 2 {
        return Err(FlowError::DegenerateFit(rows.len()));
    }
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let ls: Vec<f64> = rows.iter().map(|r| r.log_perimeter).collect();
    let (slope, intercept, r2) = linear_fit(&ts, &ls);
    Ok(GrowthFit { slope, intercept, r2, truncated, report: FlowReport { rows } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionLevel {
    pub t: f64,
    pub band_nodes: usize,
    pub violations: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionReport {
    pub levels: Vec<InclusionLevel>,
    pub max_fraction: f64,
}

/// For each `t`, counts band nodes with `u_a < t ≤ u_b`, i.e. points of
/// `E_t^a` missing from `E_t^b`. Band nodes are those within the kernel
/// support of either level surface.
pub fn inclusion_check(
    u_a: &GridField,
    inside_a: &[bool],
    u_b: &GridField,
    inside_b: &[bool],
    t_grid: &[f64],
) -> Result<InclusionReport, FlowError> {
    if u_a.spec() != u_b.spec() {
        return Err(GridError::SpecMismatch.into());
    }
    if let Some(i) = (0..inside_a.len()).find(|&i| inside_a[i] && !inside_b[i]) {
        return Err(FlowError::InitialInclusion(i));
    }
    let (qa, qb) = (LevelQuadrature::new(u_a), LevelQuadrature::new(u_b));
    let mut levels = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let sa = qa.auto_band(t).map(|b| b.support()).unwrap_or(0.0);
        let sb = qb.auto_band(t).map(|b| b.support()).unwrap_or(0.0);
        let (a, b) = (u_a.data(), u_b.data());
        let mut band_nodes = 0;
        let mut violations = 0;
        for i in 0..a.len() {
            if (a[i] - t).abs() < sa || (b[i] - t).abs() < sb {
                band_nodes += 1;
                if a[i] < t && b[i] >= t {
                    violations += 1;
                }
            }
        }
        let fraction = if band_nodes > 0 { violations as f64 / band_nodes as f64 } else { 0.0 };
        levels.push(InclusionLevel { t, band_nodes, violations, fraction });
    }
    let max_fraction = levels.iter().map(|l| l.fraction).fold(0.0, f64::max);
    Ok(InclusionReport { levels, max_fraction })
}

/// `û(y) = u(δ_λ y)` on the same grid. Arguments leaving the box are
/// clamped to it; the returned mask marks the nodes where that happened.
pub fn pullback_clamped(u: &GridField, lambda: f64) -> Result<(GridField, Vec<bool>), FlowError> {
    let s = *u.spec();
    let pairs: Vec<(f64, bool)> = (0..s.len())
        .into_par_iter()
        .map(|i| {
            let y = dilate(lambda, s.point(i)).expect("positive factor");
            let a = y.to_array();
            let c = HPoint::from_array(std::array::from_fn(|k| a[k].clamp(s.lo[k], s.hi[k])));
            let v = trilinear(&s, u.data(), c).expect("clamped into the box");
            (v, c != y)
        })
        .collect();
    let (data, clamped): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
    Ok((GridField::new(s, data)?, clamped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaledRow {
    pub t: f64,
    pub hperimeter: f64,
    pub volume: f64,
    /// `(P_H(Ê_t) − P_H(E0)) / P_H(E0)`.
    pub drift: f64,
    /// `|Ê_t| / (e^{−4t/3} |E_t|) − 1`.
    pub volume_scaling_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledReport {
    pub base_perimeter: f64,
    pub rows: Vec<RescaledRow>,
    pub max_drift: f64,
}

impl RescaledReport {
    pub fn flow_report(&self) -> FlowReport {
        FlowReport {
            rows: self
                .rows
                .iter()
                .map(|r| FlowRow {
                    t: r.t,
                    volume: r.volume,
                    hperimeter: r.hperimeter,
                    log_perimeter: r.hperimeter.ln(),
                    residual_linf: 0.0,
                    char_fraction: 0.0,
                })
                .collect(),
        }
    }
}

/// H-perimeter of the rescaled sets `Ê_t = δ_{e^{−t/3}} E_t`, obtained as
/// `{û_t < t}` with `û_t(y) = u(δ_{e^{t/3}} y)`, against `P_H(E0)`.
pub fn rescaled_flow(u: &GridField, t_grid: &[f64]) -> Result<RescaledReport, FlowError> {
    let q = LevelQuadrature::new(u);
    let base_perimeter = q.hperimeter(&q.auto_band(0.0)?)?;
    let rows: Vec<Result<RescaledRow, FlowError>> = t_grid
        .par_iter()
        .map(|&t| {
            let (hat, clamped) = pullback_clamped(u, (t / 3.0).exp())?;
            let qh = LevelQuadrature::new(&hat);
            let band = qh.auto_band(t)?;
            let ramp_support = band.support();
            if (0..clamped.len()).any(|i| clamped[i] && (hat.data()[i] - t).abs() < ramp_support) {
                return Err(FlowError::PullbackEscapes { t });
            }
            let per = qh.hperimeter(&band)?;
            let vol = qh.volume(t)?;
            let vol_t = q.volume(t)?;
            Ok(RescaledRow {
                t,
                hperimeter: per,
                volume: vol,
                drift: (per - base_perimeter) / base_perimeter,
                volume_scaling_error: vol / ((-4.0 * t / 3.0).exp() * vol_t) - 1.0,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let max_drift = rows.iter().map(|r| r.drift.abs()).fold(0.0, f64::max);
    Ok(RescaledReport { base_perimeter, rows, max_drift })
}

/// One side-by-side identity comparison, serialized into JSON reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
    pub pass: bool,
}

impl IdentityCheck {
    pub fn new(name: &str, lhs: f64, rhs: f64, tol: f64) -> Self {
        let rel_err = (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE);
        Self { name: name.to_string(), lhs, rhs, rel_err, pass: rel_err <= tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinkowskiReport {
    /// `3 P_H(E)`.
    pub lhs: f64,
    /// `∫ H0 ⟨y′, ν⟩ dH²` over non-characteristic band nodes.
    pub rhs: f64,
    pub rel_err: f64,
    /// Share of absolute band weight on characteristic nodes.
    pub char_fraction: f64,
    pub reliable: bool,
}

fn y_prime_dot(q: &LevelQuadrature, i: usize) -> f64 {
    let y = q.field().spec().point(i);
    let d = q.partials();
    y.x1 * d[0].data()[i] + y.x2 * d[1].data()[i] + 2.0 * y.x3 * d[2].data()[i]
}

/// Both sides of `3 P_H(E) = ∫ H0 ⟨y′, ν⟩ dH²` for `E = {u < t}`, with
/// `y′ = (y1, y2, 2y3)` the generator of the dilations.
pub fn minkowski_check(u: &GridField, t: f64, band: &BandSpec) -> Result<MinkowskiReport, FlowError> {
    let band = BandSpec { center: t, ..*band };
    let geo = LevelGeometry::new(u);
    let q = &geo.quad;
    let samples = mean_curvature_h(u, &band, t)?;
    let lhs = 3.0 * q.hperimeter(&band)?;
    let phi = integrand_field(u, |i| {
        let n = q.frame_norm(i);
        if n == 0.0 {
            return 0.0;
        }
        geo.h0(i, samples.eta_char).map_or(0.0, |h| h * y_prime_dot(q, i) / n)
    })?;
    let rhs = q.surface_integral_euclidean(&band, &phi)?;
    let char_fraction = samples.characteristic_fraction();
    Ok(MinkowskiReport {
        lhs,
        rhs,
        rel_err: (lhs - rhs).abs() / lhs.abs(),
        char_fraction,
        reliable: char_fraction <= MAX_CHAR_FRACTION,
    })
}

fn integrand_field<F: Fn(usize) -> f64 + Sync + Send>(u: &GridField, f: F) -> Result<GridField, GridError> {
    let data = (0..u.spec().len()).into_par_iter().map(f).collect();
    GridField::new(*u.spec(), data)
}

/// `∫⟨y′, ν⟩ dH²` over `{u = t}` against `4|{u < t}|`.
pub fn divergence_check(u: &GridField, t: f64, band: &BandSpec) -> Result<IdentityCheck, FlowError> {
    let band = BandSpec { center: t, ..*band };
    let q = LevelQuadrature::new(u);
    let phi = integrand_field(u, |i| {
        let n = q.frame_norm(i);
        if n == 0.0 {
            0.0
        } else {
            y_prime_dot(&q, i) / n
        }
    })?;
    let lhs = q.surface_integral_euclidean(&band, &phi)?;
    let rhs = 4.0 * q.volume(t)?;
    Ok(IdentityCheck::new("divergence", lhs, rhs, 0.01))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeintzeKarcherReport {
    /// `∫ H0⁻¹ dσ_H`.
    pub lhs: f64,
    /// `(4/3)|E|`.
    pub rhs: f64,
    pub margin: f64,
}

/// Both sides of `∫ H0⁻¹ dσ_H ≥ (4/3)|E|` for `E = {u < t}`.
pub fn heintze_karcher_check(u: &GridField, t: f64, band: &BandSpec) -> Result<HeintzeKarcherReport, FlowError> {
    let band = BandSpec { center: t, ..*band };
    let geo = LevelGeometry::new(u);
    let samples = mean_curvature_h(u, &band, t)?;
    for n in &samples.nodes {
        if let Some(h) = n.h0 {
            if h <= 0.0 {
                return Err(FlowError::NonPositiveH0 { index: n.index, value: h });
            }
        }
    }
    let inv = integrand_field(u, |i| geo.h0(i, samples.eta_char).map_or(0.0, |h| if h > 0.0 { 1.0 / h } else { 0.0 }))?;
    let lhs = geo.quad.surface_integral(&band, &inv)?;
    let rhs = 4.0 / 3.0 * geo.quad.volume(t)?;
    Ok(HeintzeKarcherReport { lhs, rhs, margin: lhs - rhs })
}

/// Closed-form data of the isoperimetric bubble set of radius `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleSet {
    pub radius: f64,
}

impl BubbleSet {
    pub fn h0(&self) -> f64 {
        2.0 / self.radius
    }

    pub fn hperimeter(&self) -> f64 {
        0.5 * std::f64::consts::PI.powi(2) * self.radius.powi(3)
    }

    pub fn volume(&self) -> f64 {
        3.0 / 16.0 * std::f64::consts::PI.powi(2) * self.radius.powi(4)
    }

    /// Minkowski, constant-curvature and Heintze–Karcher equality relations
    /// evaluated from the closed forms.
    pub fn identities(&self) -> Vec<IdentityCheck> {
        let (p, h, v) = (self.hperimeter(), self.h0(), self.volume());
        vec![
            IdentityCheck::new("bubble_minkowski", 3.0 * p, 4.0 * h * v, 1e-14),
            IdentityCheck::new("bubble_heintze_karcher", p / h, 4.0 / 3.0 * v, 1e-14),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub lambda: f64,
    pub volume_ratio: f64,
    pub perimeter_ratio: f64,
    /// `volume_ratio / λ⁴ − 1`.
    pub volume_error: f64,
    /// `perimeter_ratio / λ³ − 1`.
    pub perimeter_error: f64,
}

/// Volume and H-perimeter of `{f_lambda < t}` relative to `{f < t}`, where
/// the first set is expected to be the `δλ` image of the second.
pub fn scaling_check(f: &GridField, f_lambda: &GridField, t: f64, lambda: f64) -> Result<ScalingReport, FlowError> {
    let (q, ql) = (LevelQuadrature::new(f), LevelQuadrature::new(f_lambda));
    let volume_ratio = ql.volume(t)? / q.volume(t)?;
    let perimeter_ratio = ql.hperimeter(&ql.auto_band(t)?)? / q.hperimeter(&q.auto_band(t)?)?;
    Ok(ScalingReport {
        lambda,
        volume_ratio,
        perimeter_ratio,
        volume_error: volume_ratio / lambda.powi(4) - 1.0,
        perimeter_error: perimeter_ratio / lambda.powi(3) - 1.0,
    })
}
