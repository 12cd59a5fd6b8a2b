//! The explicit Korányi solution `u = (3/4) ln ρ` of the flow and its
//! closed-form geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heis::{horiz_grad, horiz_mean_curvature, koranyi_norm, rho, HPoint, HVector, Rho, SmoothFn};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error("the explicit solution is undefined at the group identity")]
    Origin,
}

/// Closed-form values of the explicit solution at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactEval {
    pub u: f64,
    pub grad0: HVector,
    /// `None` on the vertical axis, where the level surface is characteristic.
    pub h0: Option<f64>,
}

/// Stateless handle for `u(x) = (3/4) ln ρ(x)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KoranyiSolution;

impl KoranyiSolution {
    pub fn rho(&self, x: HPoint) -> f64 {
        rho(x)
    }

    pub fn u(&self, x: HPoint) -> f64 {
        0.75 * rho(x).ln()
    }

    /// Gauge radius `e^{t/3}` of the level surface `M_t`.
    pub fn level_radius(&self, t: f64) -> f64 {
        (t / 3.0).exp()
    }

    /// The two characteristic points `(0, 0, ±¼ e^{2t/3})` of `M_t`.
    pub fn characteristic_points(&self, t: f64) -> [HPoint; 2] {
        let z = 0.25 * (2.0 * t / 3.0).exp();
        [HPoint::new(0.0, 0.0, z), HPoint::new(0.0, 0.0, -z)]
    }

    /// Closed-form `u`, `∇0u` and `H0 = ‖∇0u‖ = 3 |x'| / √ρ`.
    pub fn eval(&self, x: HPoint) -> Result<ExactEval, ExactError> {
        let r = rho(x);
        if r == 0.0 {
            return Err(ExactError::Origin);
        }
        let grad0 = horiz_grad(self, x);
        let h0 = if x.x1 == 0.0 && x.x2 == 0.0 {
            None
        } else {
            Some(3.0 * (x.horizontal_sq() / r).sqrt())
        };
        Ok(ExactEval { u: 0.75 * r.ln(), grad0, h0 })
    }

    /// Draws noncharacteristic points in the shell `0.5 < ‖x‖_K < 2` and
    /// compares the trace-form mean curvature with `‖∇0u‖`.
    pub fn residual_selftest(&self, samples: usize, seed: u64) -> SelftestReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut max_residual: f64 = 0.0;
        let mut worst = HPoint::IDENTITY;
        let mut excluded = 0usize;
        let mut tested = 0usize;
        while tested < samples {
            let x = HPoint::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0));
            let g = koranyi_norm(x);
            if !(0.5 < g && g < 2.0) {
                continue;
            }
            if x.horizontal_sq().sqrt() < 1e-3 * g {
                excluded += 1;
                continue;
            }
            let trace = match horiz_mean_curvature(self, x) {
                Ok(h) => h,
                Err(_) => {
                    excluded += 1;
                    continue;
                }
            };
            let res = (trace - horiz_grad(self, x).norm()).abs();
            if res > max_residual {
                max_residual = res;
                worst = x;
            }
            tested += 1;
        }
        SelftestReport {
            samples: tested,
            excluded,
            seed,
            max_residual,
            worst_point: worst,
            tolerance: SELFTEST_TOL,
            pass: max_residual <= SELFTEST_TOL,
        }
    }
}

/// Analytic residual bound asserted by [`KoranyiSolution::residual_selftest`].
pub const SELFTEST_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub samples: usize,
    pub excluded: usize,
    pub seed: u64,
    pub max_residual: f64,
    pub worst_point: HPoint,
    pub tolerance: f64,
    pub pass: bool,
}

impl SmoothFn for KoranyiSolution {
    fn value(&self, x: HPoint) -> f64 {
        self.u(x)
    }

    fn partials(&self, x: HPoint) -> [f64; 3] {
        let r = rho(x);
        let d = Rho.partials(x);
        [0.75 * d[0] / r, 0.75 * d[1] / r, 0.75 * d[2] / r]
    }

    fn second_partials(&self, x: HPoint) -> Option<[[f64; 3]; 3]> {
        let r = rho(x);
        let d = Rho.partials(x);
        let h = Rho.second_partials(x)?;
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = 0.75 * (h[i][j] / r - d[i] * d[j] / (r * r));
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heis::dilate;

    #[test]
    fn equator_values() {
        let e = KoranyiSolution.eval(HPoint::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(e.u, 0.0);
        assert!((e.h0.unwrap() - 3.0).abs() < 1e-15);
        assert!((e.grad0.norm() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn characteristic_flag_on_axis() {
        let e = KoranyiSolution.eval(HPoint::new(0.0, 0.0, 0.25)).unwrap();
        assert_eq!(e.h0, None);
        assert!(e.u.abs() < 1e-15);
        assert_eq!(KoranyiSolution.eval(HPoint::IDENTITY), Err(ExactError::Origin));
        let [a, b] = KoranyiSolution.characteristic_points(0.0);
        assert_eq!(a, HPoint::new(0.0, 0.0, 0.25));
        assert_eq!(b, HPoint::new(0.0, 0.0, -0.25));
    }

    #[test]
    fn dilation_shifts_time() {
        let x = HPoint::new(0.4, -0.9, 0.3);
        for lambda in [0.5, 1.5, 3.0] {
            let lhs = KoranyiSolution.u(dilate(lambda, x).unwrap());
            let rhs = KoranyiSolution.u(x) + 3.0 * f64::ln(lambda);
            assert!((lhs - rhs).abs() < 1e-13);
        }
    }

    #[test]
    fn level_timing() {
        for t in [0.0, 0.1, 0.5, 2.0] {
            let r = KoranyiSolution.level_radius(t);
            let x = HPoint::new(r, 0.0, 0.0);
            assert!((KoranyiSolution.u(x) - t).abs() < 1e-13);
            assert!((rho(x) - (4.0 * t / 3.0).exp()).abs() < 1e-12 * rho(x));
            let [c, _] = KoranyiSolution.characteristic_points(t);
            assert!((KoranyiSolution.u(c) - t).abs() < 1e-13);
        }
    }

    #[test]
    fn selftest_passes() {
        let rep = KoranyiSolution.residual_selftest(10_000, 7);
        assert_eq!(rep.samples, 10_000);
        assert!(rep.pass, "{rep:?}");
    }
}
