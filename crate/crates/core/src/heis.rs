//! Exact group operations of the first Heisenberg group, the Korányi gauge,
//! and horizontal differential operators evaluated pointwise.
//!
//! Points are carried in global exponential coordinates `(x1, x2, x3)`.
//! Horizontal vectors are always expressed in the left-invariant frame
//! `X1 = ∂1 − (x2/2)∂3`, `X2 = ∂2 + (x1/2)∂3`, with `X3 = ∂3 = [X1, X2]`.

use std::ops::Mul;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gradient floor below which the p-Laplacian reports degeneracy.
pub const GRADIENT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeisError {
    #[error("dilation factor must be positive, got {0}")]
    NonPositiveDilation(f64),
    #[error("horizontal gradient {norm:e} is below the floor {floor:e}")]
    DegenerateGradient { norm: f64, floor: f64 },
    #[error("point {0:?} lies on the singular set of the function")]
    Singular(HPoint),
}

/// A point of the group in exponential coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HPoint {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl HPoint {
    pub const IDENTITY: HPoint = HPoint { x1: 0.0, x2: 0.0, x3: 0.0 };

    pub const fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }

    /// Squared Euclidean norm of the horizontal projection `x1² + x2²`.
    pub fn horizontal_sq(&self) -> f64 {
        self.x1 * self.x1 + self.x2 * self.x2
    }

    pub fn inverse(self) -> Self {
        group_inv(self)
    }

    pub fn koranyi_norm(self) -> f64 {
        koranyi_norm(self)
    }
}

impl Mul for HPoint {
    type Output = HPoint;

    fn mul(self, rhs: HPoint) -> HPoint {
        group_mul(self, rhs)
    }
}

/// Horizontal tangent vector `a X1 + b X2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HVector {
    pub a: f64,
    pub b: f64,
}

impl HVector {
    pub const fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn norm(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn dot(&self, other: &HVector) -> f64 {
        self.a * other.a + self.b * other.b
    }

    /// Expresses the vector in Euclidean coordinates at the base point `x`.
    pub fn to_euclidean(&self, x: HPoint) -> [f64; 3] {
        [self.a, self.b, 0.5 * (x.x1 * self.b - x.x2 * self.a)]
    }
}

/// Symmetrized second horizontal Hessian `[u,ij]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymHess {
    pub h11: f64,
    pub h12: f64,
    pub h22: f64,
}

impl SymHess {
    pub fn trace(&self) -> f64 {
        self.h11 + self.h22
    }

    /// The quadratic form `vᵀ H v`.
    pub fn quad(&self, v: &HVector) -> f64 {
        self.h11 * v.a * v.a + 2.0 * self.h12 * v.a * v.b + self.h22 * v.b * v.b
    }
}

pub fn group_mul(x: HPoint, y: HPoint) -> HPoint {
    HPoint {
        x1: x.x1 + y.x1,
        x2: x.x2 + y.x2,
        x3: x.x3 + y.x3 + 0.5 * (x.x1 * y.x2 - y.x1 * x.x2),
    }
}

pub fn group_inv(x: HPoint) -> HPoint {
    HPoint::new(-x.x1, -x.x2, -x.x3)
}

/// Anisotropic dilation `δλ(x) = (λx1, λx2, λ²x3)`.
pub fn dilate(lambda: f64, x: HPoint) -> Result<HPoint, HeisError> {
    if !(lambda > 0.0) {
        return Err(HeisError::NonPositiveDilation(lambda));
    }
    Ok(HPoint::new(lambda * x.x1, lambda * x.x2, lambda * lambda * x.x3))
}

/// `ρ(x) = (x1² + x2²)² + 16 x3²`, the fourth power of the gauge.
pub fn rho(x: HPoint) -> f64 {
    let r2 = x.horizontal_sq();
    r2 * r2 + 16.0 * x.x3 * x.x3
}

pub fn koranyi_norm(x: HPoint) -> f64 {
    rho(x).sqrt().sqrt()
}

/// Korányi distance `d(x, y) = ‖y⁻¹ · x‖_K`.
pub fn koranyi_dist(x: HPoint, y: HPoint) -> f64 {
    koranyi_norm(group_mul(group_inv(y), x))
}

/// A scalar function with exact Euclidean first partials.
///
/// Second partials are optional; when absent they are produced by central
/// differencing of the first partials with step [`fd_step`].
pub trait SmoothFn {
    fn value(&self, x: HPoint) -> f64;

    fn partials(&self, x: HPoint) -> [f64; 3];

    fn second_partials(&self, _x: HPoint) -> Option<[[f64; 3]; 3]> {
        None
    }
}

impl<T: SmoothFn + ?Sized> SmoothFn for &T {
    fn value(&self, x: HPoint) -> f64 {
        (**self).value(x)
    }
    fn partials(&self, x: HPoint) -> [f64; 3] {
        (**self).partials(x)
    }
    fn second_partials(&self, x: HPoint) -> Option<[[f64; 3]; 3]> {
        (**self).second_partials(x)
    }
}

/// Nested-difference step, scaled with the gauge of the evaluation point.
pub fn fd_step(x: HPoint) -> f64 {
    1e-4 * koranyi_norm(x).max(1.0)
}

/// Euclidean Hessian, exact when the function provides it.
pub fn euclidean_hessian<F: SmoothFn + ?Sized>(f: &F, x: HPoint) -> [[f64; 3]; 3] {
    if let Some(h) = f.second_partials(x) {
        return h;
    }
    let step = fd_step(x);
    let mut h = [[0.0; 3]; 3];
    for j in 0..3 {
        let mut xp = x.to_array();
        let mut xm = x.to_array();
        xp[j] += step;
        xm[j] -= step;
        let gp = f.partials(HPoint::from_array(xp));
        let gm = f.partials(HPoint::from_array(xm));
        for i in 0..3 {
            h[i][j] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    for i in 0..3 {
        for j in (i + 1)..3 {
            let s = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = s;
            h[j][i] = s;
        }
    }
    h
}

/// Frame components `(X1f, X2f)` from Euclidean partials at `x`.
pub fn horizontal_from_partials(x: HPoint, d: [f64; 3]) -> HVector {
    HVector::new(d[0] - 0.5 * x.x2 * d[2], d[1] + 0.5 * x.x1 * d[2])
}

pub fn horiz_grad<F: SmoothFn + ?Sized>(f: &F, x: HPoint) -> HVector {
    horizontal_from_partials(x, f.partials(x))
}

/// All four second horizontal derivatives `X_i X_j f`, row-major
/// `[X1X1, X1X2, X2X1, X2X2]`.
pub fn horiz_second<F: SmoothFn + ?Sized>(f: &F, x: HPoint) -> [f64; 4] {
    let d = f.partials(x);
    let h = euclidean_hessian(f, x);
    let (x1, x2) = (x.x1, x.x2);
    let x1x1 = h[0][0] - x2 * h[0][2] + 0.25 * x2 * x2 * h[2][2];
    let x2x2 = h[1][1] + x1 * h[1][2] + 0.25 * x1 * x1 * h[2][2];
    let mixed = h[0][1] + 0.5 * x1 * h[0][2] - 0.5 * x2 * h[1][2] - 0.25 * x1 * x2 * h[2][2];
    [x1x1, mixed + 0.5 * d[2], mixed - 0.5 * d[2], x2x2]
}

pub fn horiz_hess_sym<F: SmoothFn + ?Sized>(f: &F, x: HPoint) -> SymHess {
    let s = horiz_second(f, x);
    SymHess { h11: s[0], h12: 0.5 * (s[1] + s[2]), h22: s[3] }
}

/// `X1X2f − X2X1f − X3f`, identically zero for smooth `f`.
pub fn commutator_defect<F: SmoothFn + ?Sized>(f: &F, x: HPoint) -> f64 {
    let s = horiz_second(f, x);
    s[1] - s[2] - f.partials(x)[2]
}

/// Horizontal Laplacian and horizontal ∞-Laplacian `(Δ0 f, Δ0,∞ f)`.
pub fn horiz_laplacians<F: SmoothFn + ?Sized>(f: &F, x: HPoint) -> (f64, f64) {
    let hess = horiz_hess_sym(f, x);
    let g = horiz_grad(f, x);
    (hess.trace(), hess.quad(&g))
}

/// Horizontal p-Laplacian in expanded form
/// `‖∇0f‖^{p−2} Δ0 f + (p−2) ‖∇0f‖^{p−4} Δ0,∞ f`.
pub fn horiz_p_laplacian<F: SmoothFn + ?Sized>(f: &F, x: HPoint, p: f64) -> Result<f64, HeisError> {
    let g = horiz_grad(f, x).norm();
    if g <= GRADIENT_FLOOR {
        return Err(HeisError::DegenerateGradient { norm: g, floor: GRADIENT_FLOOR });
    }
    let (lap0, lapinf) = horiz_laplacians(f, x);
    Ok(g.powf(p - 2.0) * lap0 + (p - 2.0) * g.powf(p - 4.0) * lapinf)
}

/// Horizontal mean curvature of the level set through `x` by the trace formula
/// `Tr[(I − ν0⊗ν0) (∇0²f)*] / ‖∇0f‖`.
pub fn horiz_mean_curvature<F: SmoothFn + ?Sized>(f: &F, x: HPoint) -> Result<f64, HeisError> {
    let g = horiz_grad(f, x);
    let n = g.norm();
    if n <= GRADIENT_FLOOR {
        return Err(HeisError::DegenerateGradient { norm: n, floor: GRADIENT_FLOOR });
    }
    let hess = horiz_hess_sym(f, x);
    Ok((hess.trace() - hess.quad(&g) / (n * n)) / n)
}

/// `ρ` as a smooth function with exact derivatives.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rho;

impl SmoothFn for Rho {
    fn value(&self, x: HPoint) -> f64 {
        rho(x)
    }

    fn partials(&self, x: HPoint) -> [f64; 3] {
        let r2 = x.horizontal_sq();
        [4.0 * x.x1 * r2, 4.0 * x.x2 * r2, 32.0 * x.x3]
    }

    fn second_partials(&self, x: HPoint) -> Option<[[f64; 3]; 3]> {
        let r2 = x.horizontal_sq();
        let m = 8.0 * x.x1 * x.x2;
        Some([
            [4.0 * r2 + 8.0 * x.x1 * x.x1, m, 0.0],
            [m, 4.0 * r2 + 8.0 * x.x2 * x.x2, 0.0],
            [0.0, 0.0, 32.0],
        ])
    }
}

/// A function of a point composed with left translation by `center⁻¹`,
/// i.e. `x ↦ f(center⁻¹ · x)`. Derivatives follow by the chain rule.
#[derive(Debug, Clone, Copy)]
pub struct Translated<F> {
    pub inner: F,
    pub center: HPoint,
}

impl<F> Translated<F> {
    pub fn new(inner: F, center: HPoint) -> Self {
        Self { inner, center }
    }

    fn local(&self, x: HPoint) -> HPoint {
        group_mul(group_inv(self.center), x)
    }

    // Jacobian of y = c⁻¹·x: y3 = x3 − c3 + ½(−c1 x2 + x1 c2).
    fn pull_grad(&self, d: [f64; 3]) -> [f64; 3] {
        let c = self.center;
        [d[0] + 0.5 * c.x2 * d[2], d[1] - 0.5 * c.x1 * d[2], d[2]]
    }
}

impl<F: SmoothFn> SmoothFn for Translated<F> {
    fn value(&self, x: HPoint) -> f64 {
        self.inner.value(self.local(x))
    }

    fn partials(&self, x: HPoint) -> [f64; 3] {
        self.pull_grad(self.inner.partials(self.local(x)))
    }

    fn second_partials(&self, x: HPoint) -> Option<[[f64; 3]; 3]> {
        let h = self.inner.second_partials(self.local(x))?;
        let c = self.center;
        // dy/dx rows.
        let j = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.5 * c.x2, -0.5 * c.x1, 1.0]];
        let mut out = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        s += j[k][a] * h[k][l] * j[l][b];
                    }
                }
                out[a][b] = s;
            }
        }
        Some(out)
    }
}

/// Korányi gauge distance to a fixed center, `x ↦ d(x, center)`.
#[derive(Debug, Clone, Copy)]
pub struct GaugeDistance {
    pub center: HPoint,
}

impl GaugeDistance {
    pub fn new(center: HPoint) -> Self {
        Self { center }
    }
}

impl SmoothFn for GaugeDistance {
    fn value(&self, x: HPoint) -> f64 {
        koranyi_dist(x, self.center)
    }

    fn partials(&self, x: HPoint) -> [f64; 3] {
        let t = Translated::new(Rho, self.center);
        let r = t.value(x);
        if r <= 0.0 {
            return [0.0; 3];
        }
        let d = t.partials(x);
        let f = 0.25 * r.powf(-0.75);
        [f * d[0], f * d[1], f * d[2]]
    }

    fn second_partials(&self, x: HPoint) -> Option<[[f64; 3]; 3]> {
        let t = Translated::new(Rho, self.center);
        let r = t.value(x);
        if r <= 0.0 {
            return None;
        }
        let d = t.partials(x);
        let h = t.second_partials(x)?;
        let f1 = 0.25 * r.powf(-0.75);
        let f2 = -0.1875 * r.powf(-1.75);
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = f1 * h[i][j] + f2 * d[i] * d[j];
            }
        }
        Some(out)
    }
}

/// Explicit horizontally p-harmonic gauge profile `(d(x, x0)/r)^{(4−p)/(1−p)}`.
///
/// First partials are exact; second partials come from nested differencing.
#[derive(Debug, Clone, Copy)]
pub struct GaugeProfile {
    pub center: HPoint,
    pub radius: f64,
    pub p: f64,
}

impl GaugeProfile {
    pub fn exponent(&self) -> f64 {
        (4.0 - self.p) / (1.0 - self.p)
    }
}

impl SmoothFn for GaugeProfile {
    fn value(&self, x: HPoint) -> f64 {
        (koranyi_dist(x, self.center) / self.radius).powf(self.exponent())
    }

    fn partials(&self, x: HPoint) -> [f64; 3] {
        let g = GaugeDistance::new(self.center);
        let d = g.value(x);
        let e = self.exponent();
        let f = e * (d / self.radius).powf(e - 1.0) / self.radius;
        let dd = g.partials(x);
        [f * dd[0], f * dd[1], f * dd[2]]
    }
}

/// Adapter turning closures into a [`SmoothFn`].
pub struct FnSmooth<V, D> {
    pub value: V,
    pub partials: D,
}

impl<V, D> SmoothFn for FnSmooth<V, D>
where
    V: Fn(HPoint) -> f64,
    D: Fn(HPoint) -> [f64; 3],
{
    fn value(&self, x: HPoint) -> f64 {
        (self.value)(x)
    }
    fn partials(&self, x: HPoint) -> [f64; 3] {
        (self.partials)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    struct X3;
    impl SmoothFn for X3 {
        fn value(&self, x: HPoint) -> f64 {
            x.x3
        }
        fn partials(&self, _: HPoint) -> [f64; 3] {
            [0.0, 0.0, 1.0]
        }
        fn second_partials(&self, _: HPoint) -> Option<[[f64; 3]; 3]> {
            Some([[0.0; 3]; 3])
        }
    }

    struct X1Sq;
    impl SmoothFn for X1Sq {
        fn value(&self, x: HPoint) -> f64 {
            x.x1 * x.x1
        }
        fn partials(&self, x: HPoint) -> [f64; 3] {
            [2.0 * x.x1, 0.0, 0.0]
        }
    }

    // Cubic with all mixed terms; second partials deliberately omitted.
    struct Poly;
    impl SmoothFn for Poly {
        fn value(&self, x: HPoint) -> f64 {
            x.x1 * x.x2 * x.x3 + x.x3 * x.x3 + 2.0 * x.x1 * x.x1 * x.x2
        }
        fn partials(&self, x: HPoint) -> [f64; 3] {
            [
                x.x2 * x.x3 + 4.0 * x.x1 * x.x2,
                x.x1 * x.x3 + 2.0 * x.x1 * x.x1,
                x.x1 * x.x2 + 2.0 * x.x3,
            ]
        }
    }

    #[test]
    fn group_law_examples() {
        let p = group_mul(HPoint::new(1.0, 0.0, 0.0), HPoint::new(0.0, 1.0, 0.0));
        assert_eq!(p, HPoint::new(1.0, 1.0, 0.5));
        let x = HPoint::new(0.3, -1.2, 2.5);
        assert_eq!(x * HPoint::IDENTITY, x);
        assert_eq!(HPoint::new(1.0, 2.0, 3.0) * HPoint::new(-1.0, -2.0, -3.0), HPoint::IDENTITY);
        assert_eq!(group_inv(HPoint::IDENTITY), HPoint::IDENTITY);
        assert_eq!(group_inv(HPoint::new(1.0, 2.0, 3.0)), HPoint::new(-1.0, -2.0, -3.0));
    }

    #[test]
    fn dilation_examples() {
        assert_eq!(dilate(2.0, HPoint::new(1.0, 1.0, 1.0)).unwrap(), HPoint::new(2.0, 2.0, 4.0));
        let x = HPoint::new(0.7, -0.1, 0.4);
        assert_eq!(dilate(1.0, x).unwrap(), x);
        assert!(matches!(dilate(0.0, x), Err(HeisError::NonPositiveDilation(_))));
        assert!(dilate(-1.0, x).is_err());
    }

    #[test]
    fn gauge_examples() {
        assert_eq!(koranyi_norm(HPoint::new(1.0, 0.0, 0.0)), 1.0);
        assert!(close(koranyi_norm(HPoint::new(0.0, 0.0, 1.0)), 2.0, 1e-15));
        assert!(close(koranyi_norm(HPoint::new(1.0, 1.0, 0.0)), 2f64.sqrt(), 1e-15));
        let x = HPoint::new(0.2, 0.5, -0.9);
        assert_eq!(koranyi_dist(x, x), 0.0);
        assert_eq!(koranyi_dist(HPoint::new(1.0, 0.0, 0.0), HPoint::IDENTITY), 1.0);
    }

    #[test]
    fn horizontal_gradient_examples() {
        let g = horiz_grad(&X3, HPoint::new(2.0, 4.0, 0.0));
        assert_eq!(g, HVector::new(-2.0, 1.0));
        let x1 = FnSmooth { value: |x: HPoint| x.x1, partials: |_| [1.0, 0.0, 0.0] };
        assert_eq!(horiz_grad(&x1, HPoint::new(3.0, -1.0, 7.0)), HVector::new(1.0, 0.0));
        let g = horiz_grad(&Rho, HPoint::new(1.0, 0.0, 0.0));
        assert_eq!(g, HVector::new(4.0, 0.0));
    }

    #[test]
    fn hessian_examples() {
        let h = horiz_hess_sym(&Rho, HPoint::new(1.0, 0.0, 0.0));
        assert!(close(h.h11, 12.0, 1e-14) && close(h.h22, 12.0, 1e-14));
        assert!(h.h12.abs() < 1e-14);
        // h12 vanishes for ρ at any point, while X1X2ρ = 16 x3 = −X2X1ρ.
        let x = HPoint::new(0.3, -0.7, 0.45);
        let s = horiz_second(&Rho, x);
        assert!(close(s[1], 16.0 * x.x3, 1e-13));
        assert!(close(s[2], -16.0 * x.x3, 1e-13));
        assert!(horiz_hess_sym(&Rho, x).h12.abs() < 1e-13);
        // Nested differencing path.
        let h = horiz_hess_sym(&X1Sq, HPoint::IDENTITY);
        assert!(close(h.h11, 2.0, 1e-8) && h.h12.abs() < 1e-8 && h.h22.abs() < 1e-8);
    }

    #[test]
    fn laplacian_examples() {
        let (lap0, _) = horiz_laplacians(&Rho, HPoint::new(1.0, 0.0, 0.0));
        assert!(close(lap0, 24.0, 1e-14));
        let (lap0, lapinf) = horiz_laplacians(&X3, HPoint::new(1.5, -2.0, 0.3));
        assert_eq!(lap0, 0.0);
        assert_eq!(lapinf, 0.0);
        let tau = Translated::new(Rho, HPoint::new(0.2, -0.4, 0.1));
        for x in [HPoint::new(1.0, 0.5, 0.2), HPoint::new(-0.6, 0.9, -0.3), HPoint::new(0.1, 1.7, 0.8)] {
            let g = horiz_grad(&tau, x).norm();
            let (lap0, _) = horiz_laplacians(&tau, x);
            assert!(close(lap0, 1.5 * g * g / tau.value(x), 1e-12), "{lap0}");
        }
    }

    #[test]
    fn p_laplacian_examples() {
        let v = horiz_p_laplacian(&Rho, HPoint::new(1.0, 0.0, 0.0), 2.0).unwrap();
        assert!(close(v, 24.0, 1e-14));
        let tau = Translated::new(Rho, HPoint::new(-0.3, 0.2, 0.5));
        for p in [1.2, 1.5, 2.5] {
            for x in [HPoint::new(1.0, 0.5, 0.2), HPoint::new(-0.6, 0.9, -0.3)] {
                let g = horiz_grad(&tau, x).norm();
                let expect = 3.0 * p * g.powf(p) / (4.0 * tau.value(x));
                let got = horiz_p_laplacian(&tau, x, p).unwrap();
                assert!(close(got, expect, 1e-11), "p={p} {got} vs {expect}");
            }
        }
        let err = horiz_p_laplacian(&Rho, HPoint::IDENTITY, 1.5).unwrap_err();
        assert!(matches!(err, HeisError::DegenerateGradient { .. }));
    }

    #[test]
    fn gauge_profile_is_p_harmonic() {
        let x0 = HPoint::new(0.1, -0.2, 0.05);
        let pts = [
            HPoint::new(1.3, 0.4, 0.2),
            HPoint::new(-0.8, 1.1, -0.4),
            HPoint::new(0.5, -1.4, 0.9),
        ];
        for p in [1.2, 1.5, 2.0] {
            let l = GaugeProfile { center: x0, radius: 0.7, p };
            for &x in &pts {
                let g = horiz_grad(&l, x).norm();
                let scale = g.powf(p - 1.0) / koranyi_dist(x, x0);
                let v = horiz_p_laplacian(&l, x, p).unwrap();
                assert!(v.abs() <= 1e-5 * scale, "p={p} x={x:?} residual {v} scale {scale}");
            }
        }
    }

    #[test]
    fn divergence_form_matches_expansion() {
        // div0(‖∇0f‖^{p−2}∇0f) by differencing the flux.
        let f = Translated::new(Rho, HPoint::new(0.2, 0.1, -0.3));
        let x = HPoint::new(0.9, -0.5, 0.35);
        let p = 1.6;
        let flux = |y: HPoint| {
            let g = horiz_grad(&f, y);
            let s = g.norm().powf(p - 2.0);
            [s * g.a, s * g.b]
        };
        let expand = horiz_p_laplacian(&f, x, p).unwrap();
        let mut errs = Vec::new();
        for h in [1e-2, 5e-3] {
            let d = |i: usize, c: usize| {
                let mut xp = x.to_array();
                let mut xm = x.to_array();
                xp[i] += h;
                xm[i] -= h;
                (flux(HPoint::from_array(xp))[c] - flux(HPoint::from_array(xm))[c]) / (2.0 * h)
            };
            let div = d(0, 0) - 0.5 * x.x2 * d(2, 0) + d(1, 1) + 0.5 * x.x1 * d(2, 1);
            errs.push((div - expand).abs());
        }
        let ratio = errs[0] / errs[1];
        assert!(errs[1] < 1e-3 * expand.abs().max(1.0));
        assert!((3.0..5.0).contains(&ratio), "not second order: {ratio}");
    }

    #[test]
    fn commutator_for_polynomials() {
        for x in [HPoint::new(0.5, -1.0, 2.0), HPoint::new(-3.0, 0.25, 1.0)] {
            assert!(commutator_defect(&Rho, x).abs() < 1e-12);
            assert!(commutator_defect(&X3, x).abs() < 1e-15);
            assert!(commutator_defect(&Poly, x).abs() < 1e-7);
        }
    }

    #[test]
    fn mean_curvature_of_gauge_sphere_equator() {
        let h0 = horiz_mean_curvature(&GaugeDistance::new(HPoint::IDENTITY), HPoint::new(1.0, 0.0, 0.0)).unwrap();
        assert!(close(h0, 3.0, 1e-12));
    }

    fn pt() -> impl Strategy<Value = HPoint> {
        (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(a, b, c)| HPoint::new(a, b, c))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn associativity(x in pt(), y in pt(), z in pt()) {
            let l = (x * y) * z;
            let r = x * (y * z);
            for (a, b) in l.to_array().iter().zip(r.to_array()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn inverse_law(x in pt()) {
            prop_assert_eq!(x * group_inv(x), HPoint::IDENTITY);
            prop_assert_eq!(group_inv(x) * x, HPoint::IDENTITY);
            prop_assert_eq!(group_inv(group_inv(x)), x);
        }

        #[test]
        fn dilation_composition(x in pt(), a in 0.1..10.0f64, b in 0.1..10.0f64) {
            let l = dilate(a, dilate(b, x).unwrap()).unwrap();
            let r = dilate(a * b, x).unwrap();
            for (u, v) in l.to_array().iter().zip(r.to_array()) {
                prop_assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }

        #[test]
        fn gauge_homogeneity(x in pt(), lambda in 0.1..10.0f64) {
            let l = koranyi_norm(dilate(lambda, x).unwrap());
            let r = lambda * koranyi_norm(x);
            prop_assert!((l - r).abs() <= 1e-12 * (1.0 + r));
        }

        #[test]
        fn left_invariance(g in pt(), x in pt(), y in pt()) {
            let l = koranyi_dist(g * x, g * y);
            let r = koranyi_dist(x, y);
            prop_assert!((l - r).abs() <= 1e-10 * (1.0 + r));
        }

        #[test]
        fn distance_symmetry(x in pt(), y in pt()) {
            let l = koranyi_dist(x, y);
            let r = koranyi_dist(y, x);
            prop_assert!((l - r).abs() <= 1e-12 * (1.0 + r));
        }

        #[test]
        fn commutator_identity(x in pt(), c in pt()) {
            let f = Translated::new(Rho, c);
            let scale = 1.0 + f.partials(x)[2].abs() + rho(x) + rho(c);
            prop_assert!(commutator_defect(&f, x).abs() <= 1e-12 * scale);
        }
    }
}
