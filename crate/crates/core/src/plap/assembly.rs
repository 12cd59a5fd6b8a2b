//! Trilinear finite elements for the weighted horizontal p-Laplacian
//! `div0(e^{-u} (|∇0u|² + ε²)^{(p-2)/2} ∇0u) = 0`.
//!
//! Elements are integrated with the 2×2×2 Gauss rule. Slabs of elements
//! between node planes `i` and `i+1` are processed in two parity sweeps so
//! that every sweep writes disjoint memory; the result is independent of
//! the thread count.

use rayon::prelude::*;

use crate::grid::GridSpec;

use super::stencil::{offset_slot, StencilMatrix, SLOTS};

const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1], [1, 0, 0], [1, 0, 1], [1, 1, 0], [1, 1, 1]];

/// Reference-element tables shared by all elements of one grid.
#[derive(Debug, Clone)]
pub(crate) struct Element {
    spec: GridSpec,
    /// Gauss point offsets in cell units.
    gp: [[f64; 3]; 8],
    n: [[f64; 8]; 8],
    dn: [[[f64; 3]; 8]; 8],
    weight: f64,
    slot: [[usize; 8]; 8],
}

impl Element {
    pub(crate) fn new(spec: GridSpec) -> Self {
        let h = spec.h();
        let q = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
        let mut gp = [[0.0; 3]; 8];
        let mut n = [[0.0; 8]; 8];
        let mut dn = [[[0.0; 3]; 8]; 8];
        for (g, c) in CORNERS.iter().enumerate() {
            gp[g] = [q[c[0]], q[c[1]], q[c[2]]];
        }
        let lin = |on: usize, t: f64| if on == 1 { t } else { 1.0 - t };
        let dlin = |on: usize| if on == 1 { 1.0 } else { -1.0 };
        for g in 0..8 {
            let [a, b, c] = gp[g];
            for (m, k) in CORNERS.iter().enumerate() {
                n[g][m] = lin(k[0], a) * lin(k[1], b) * lin(k[2], c);
                dn[g][m] = [
                    dlin(k[0]) * lin(k[1], b) * lin(k[2], c) / h[0],
                    lin(k[0], a) * dlin(k[1]) * lin(k[2], c) / h[1],
                    lin(k[0], a) * lin(k[1], b) * dlin(k[2]) / h[2],
                ];
            }
        }
        let mut slot = [[0; 8]; 8];
        for l in 0..8 {
            for m in 0..8 {
                let o = std::array::from_fn(|a| CORNERS[m][a] as isize - CORNERS[l][a] as isize);
                slot[l][m] = offset_slot(o).expect("neighbouring corners");
            }
        }
        Self { spec, gp, n, dn, weight: spec.cell_volume() / 8.0, slot }
    }

    /// Horizontal gradients `[X1φm, X2φm]` of the basis at Gauss point `g`
    /// of the element with lower corner `(i, j, k)`.
    #[inline]
    fn horizontal(&self, g: usize, ijk: [usize; 3]) -> [[f64; 2]; 8] {
        let s = &self.spec;
        let h = s.h();
        let x1 = s.lo[0] + (ijk[0] as f64 + self.gp[g][0]) * h[0];
        let x2 = s.lo[1] + (ijk[1] as f64 + self.gp[g][1]) * h[1];
        std::array::from_fn(|m| {
            let d = self.dn[g][m];
            [d[0] - 0.5 * x2 * d[2], d[1] + 0.5 * x1 * d[2]]
        })
    }

    fn corner_nodes(&self, ijk: [usize; 3]) -> [usize; 8] {
        std::array::from_fn(|m| self.spec.index(ijk[0] + CORNERS[m][0], ijk[1] + CORNERS[m][1], ijk[2] + CORNERS[m][2]))
    }
}

/// Coefficients of the regularized flux at one point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Material {
    pub p: f64,
    pub eps: f64,
}

impl Material {
    #[inline]
    fn coeffs(&self, s2: f64) -> (f64, f64) {
        let a = s2.powf(0.5 * (self.p - 2.0));
        let b = (self.p - 2.0) * a / s2;
        (a, b)
    }
}

/// Assembles the residual `R_i = ∫ e^{-u} a(∇0u) ∇0u·∇0φ_i` and, when
/// requested, its Jacobian. Elements without any free corner are skipped.
pub(crate) fn assemble(
    el: &Element,
    mat: Material,
    u: &[f64],
    free: &[bool],
    r: &mut [f64],
    mut jac: Option<&mut StencilMatrix>,
) {
    let spec = el.spec;
    let plane = spec.n[1] * spec.n[2];
    let eps2 = mat.eps * mat.eps;
    r.fill(0.0);
    if let Some(j) = jac.as_deref_mut() {
        j.vals.fill(0.0);
    }
    for parity in 0..2 {
        let slabs = |i: usize| i % 2 == parity && i + 1 < spec.n[0];
        let work = |slab: usize, rs: &mut [f64], mut js: Option<&mut [f64]>| {
            let base = slab * plane;
            for jj in 0..spec.n[1] - 1 {
                for kk in 0..spec.n[2] - 1 {
                    let ijk = [slab, jj, kk];
                    let nodes = el.corner_nodes(ijk);
                    if !nodes.iter().any(|&v| free[v]) {
                        continue;
                    }
                    let ue: [f64; 8] = nodes.map(|v| u[v]);
                    let mut re = [0.0; 8];
                    let mut ke = [[0.0; 8]; 8];
                    for g in 0..8 {
                        let gh = el.horizontal(g, ijk);
                        let mut ug = 0.0;
                        let mut gr = [0.0; 2];
                        for m in 0..8 {
                            ug += el.n[g][m] * ue[m];
                            gr[0] += gh[m][0] * ue[m];
                            gr[1] += gh[m][1] * ue[m];
                        }
                        let s2 = gr[0] * gr[0] + gr[1] * gr[1] + eps2;
                        let (a, b) = mat.coeffs(s2);
                        let ex = (-ug).exp();
                        let f = [ex * a * gr[0], ex * a * gr[1]];
                        let w = el.weight;
                        let gf: [f64; 8] = std::array::from_fn(|m| gh[m][0] * f[0] + gh[m][1] * f[1]);
                        for l in 0..8 {
                            re[l] += w * gf[l];
                        }
                        if js.is_some() {
                            let gg: [f64; 8] = std::array::from_fn(|m| gh[m][0] * gr[0] + gh[m][1] * gr[1]);
                            let (ca, cb) = (w * ex * a, w * ex * b);
                            for l in 0..8 {
                                for m in 0..8 {
                                    ke[l][m] += ca * (gh[l][0] * gh[m][0] + gh[l][1] * gh[m][1]) + cb * gg[l] * gg[m]
                                        - w * gf[l] * el.n[g][m];
                                }
                            }
                        }
                    }
                    for l in 0..8 {
                        let loc = nodes[l] - base;
                        rs[loc] += re[l];
                        if let Some(js) = js.as_deref_mut() {
                            let row = &mut js[loc * SLOTS..(loc + 1) * SLOTS];
                            for m in 0..8 {
                                row[el.slot[l][m]] += ke[l][m];
                            }
                        }
                    }
                }
            }
        };
        let start = parity * plane;
        if start >= r.len() {
            continue;
        }
        let rchunks = r[start..].par_chunks_mut(2 * plane);
        match jac.as_deref_mut() {
            Some(j) => {
                let jchunks = j.vals[start * SLOTS..].par_chunks_mut(2 * plane * SLOTS);
                rchunks.zip(jchunks).enumerate().for_each(|(c, (rs, js))| {
                    let slab = parity + 2 * c;
                    if slabs(slab) {
                        work(slab, rs, Some(js));
                    }
                });
            }
            None => rchunks.enumerate().for_each(|(c, rs)| {
                let slab = parity + 2 * c;
                if slabs(slab) {
                    work(slab, rs, None);
                }
            }),
        }
    }
}

/// Discrete energy of `w = e^{u/(1-p)}`,
/// `Σ (1/p)((|∇0w|² + ε²)^{p/2} - ε^p)` over the Gauss points of elements
/// with at least one `active` corner.
pub(crate) fn energy(el: &Element, mat: Material, u: &[f64], active: &[bool]) -> f64 {
    let spec = el.spec;
    let p = mat.p;
    let eps2 = mat.eps * mat.eps;
    let floor = mat.eps.powf(p);
    let per_slab: Vec<f64> = (0..spec.n[0] - 1)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for jj in 0..spec.n[1] - 1 {
                for kk in 0..spec.n[2] - 1 {
                    let ijk = [i, jj, kk];
                    let nodes = el.corner_nodes(ijk);
                    if !nodes.iter().any(|&v| active[v]) {
                        continue;
                    }
                    let ue = nodes.map(|v| u[v]);
                    for g in 0..8 {
                        let gh = el.horizontal(g, ijk);
                        let mut ug = 0.0;
                        let mut gr = [0.0; 2];
                        for m in 0..8 {
                            ug += el.n[g][m] * ue[m];
                            gr[0] += gh[m][0] * ue[m];
                            gr[1] += gh[m][1] * ue[m];
                        }
                        let c = (ug / (1.0 - p)).exp() / (1.0 - p);
                        let s2 = c * c * (gr[0] * gr[0] + gr[1] * gr[1]) + eps2;
                        acc += (s2.powf(0.5 * p) - floor) / p;
                    }
                }
            }
            acc * el.weight
        })
        .collect();
    per_slab.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (GridSpec, Element, Vec<f64>, Vec<bool>) {
        let spec = GridSpec::new([-1.0, -0.8, -0.5], [1.0, 0.9, 0.6], [9, 8, 10]).unwrap();
        let el = Element::new(spec);
        let u: Vec<f64> = (0..spec.len())
            .map(|i| {
                let x = spec.point(i);
                0.3 * x.x1 + 0.2 * x.x2 * x.x2 - 0.4 * x.x3 + 0.1 * x.x1 * x.x3
            })
            .collect();
        let free: Vec<bool> = (0..spec.len()).map(|i| !spec.on_face(i)).collect();
        (spec, el, u, free)
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (spec, el, u, free) = setup();
        let mat = Material { p: 1.3, eps: 1e-2 };
        let mut r = vec![0.0; spec.len()];
        let mut jac = StencilMatrix::zeros(spec);
        assemble(&el, mat, &u, &free, &mut r, Some(&mut jac));
        let mut dir = vec![0.0; spec.len()];
        for (i, d) in dir.iter_mut().enumerate() {
            *d = ((i * 7919) % 13) as f64 / 13.0 - 0.5;
        }
        let mut jd = vec![0.0; spec.len()];
        jac.matvec(&dir, &mut jd);
        let hstep = 1e-6;
        let up: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + hstep * b).collect();
        let um: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a - hstep * b).collect();
        let (mut rp, mut rm) = (vec![0.0; spec.len()], vec![0.0; spec.len()]);
        assemble(&el, mat, &up, &free, &mut rp, None);
        assemble(&el, mat, &um, &free, &mut rm, None);
        let scale = jd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..spec.len() {
            if !free[i] {
                continue;
            }
            let fd = (rp[i] - rm[i]) / (2.0 * hstep);
            assert!((fd - jd[i]).abs() < 1e-6 * scale, "node {i}: {fd} vs {}", jd[i]);
        }
    }

    #[test]
    fn constant_fields_have_zero_residual() {
        let (spec, el, _, free) = setup();
        let mat = Material { p: 2.0, eps: 0.0 };
        let u = vec![0.7; spec.len()];
        let mut r = vec![1.0; spec.len()];
        assemble(&el, mat, &u, &free, &mut r, None);
        assert!(r.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn assembly_independent_of_thread_count() {
        let (spec, el, u, free) = setup();
        let mat = Material { p: 1.1, eps: 1e-3 };
        let run = |t: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            pool.install(|| {
                let mut r = vec![0.0; spec.len()];
                let mut j = StencilMatrix::zeros(spec);
                assemble(&el, mat, &u, &free, &mut r, Some(&mut j));
                (r, j.vals, energy(&el, mat, &u, &free))
            })
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }
}
