//! Sparse matrices with the 27-point grid stencil, ILU(0) and BiCGStab.

use rayon::prelude::*;

use crate::grid::GridSpec;

pub const SLOTS: usize = 27;
pub const DIAG: usize = 13;

/// Offset `(di, dj, dk)` of a stencil slot.
#[inline]
pub fn slot_offset(s: usize) -> [isize; 3] {
    [(s / 9) as isize - 1, ((s / 3) % 3) as isize - 1, (s % 3) as isize - 1]
}

#[inline]
pub fn offset_slot(o: [isize; 3]) -> Option<usize> {
    if o.iter().all(|c| (-1..=1).contains(c)) {
        Some(((o[0] + 1) * 9 + (o[1] + 1) * 3 + (o[2] + 1)) as usize)
    } else {
        None
    }
}

/// Row-major 27-slot matrix; slot `s` of row `i` couples node `i` to node
/// `i + offset(s)`. Slots pointing outside the grid hold zero.
#[derive(Debug, Clone)]
pub struct StencilMatrix {
    pub spec: GridSpec,
    pub vals: Vec<f64>,
    strides: [isize; 3],
}

impl StencilMatrix {
    pub fn zeros(spec: GridSpec) -> Self {
        let strides = [(spec.n[1] * spec.n[2]) as isize, spec.n[2] as isize, 1];
        Self { spec, vals: vec![0.0; spec.len() * SLOTS], strides }
    }

    #[inline]
    pub fn slot_delta(&self, s: usize) -> isize {
        let o = slot_offset(s);
        o[0] * self.strides[0] + o[1] * self.strides[1] + o[2] * self.strides[2]
    }

    #[inline]
    fn neighbor(&self, i: usize, s: usize) -> Option<usize> {
        let c = self.spec.ijk(i);
        let o = slot_offset(s);
        for a in 0..3 {
            let v = c[a] as isize + o[a];
            if v < 0 || v >= self.spec.n[a] as isize {
                return None;
            }
        }
        Some((i as isize + self.slot_delta(s)) as usize)
    }

    /// Replaces the rows of `fixed` nodes by identity rows and removes their
    /// columns from the remaining rows.
    pub fn apply_dirichlet(&mut self, fixed: &[bool]) {
        let deltas: Vec<isize> = (0..SLOTS).map(|s| self.slot_delta(s)).collect();
        let n = self.spec.len();
        self.vals.par_chunks_mut(SLOTS).enumerate().for_each(|(i, row)| {
            if fixed[i] {
                row.fill(0.0);
                row[DIAG] = 1.0;
                return;
            }
            for s in 0..SLOTS {
                let j = i as isize + deltas[s];
                if s != DIAG && j >= 0 && (j as usize) < n && fixed[j as usize] {
                    row[s] = 0.0;
                }
            }
        });
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.spec.len();
        let deltas: Vec<isize> = (0..SLOTS).map(|s| self.slot_delta(s)).collect();
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let row = &self.vals[i * SLOTS..(i + 1) * SLOTS];
            let mut acc = 0.0;
            for s in 0..SLOTS {
                let v = row[s];
                if v != 0.0 {
                    let j = (i as isize + deltas[s]) as usize;
                    debug_assert!(j < n);
                    acc += v * x[j];
                }
            }
            *yi = acc;
        });
    }
}

/// Incomplete LU factorization without fill, on the stencil pattern.
pub struct Ilu0 {
    lu: StencilMatrix,
    // table[k] lists (j, slot of (k, j) in row k) for lower slot k and each
    // later slot j of a row whose coupling to k lies in the pattern.
    table: Vec<Vec<(usize, usize)>>,
}

impl Ilu0 {
    pub fn new(a: &StencilMatrix) -> Self {
        let table: Vec<Vec<(usize, usize)>> = (0..DIAG)
            .map(|sk| {
                let ok = slot_offset(sk);
                ((sk + 1)..SLOTS)
                    .filter_map(|sj| {
                        let oj = slot_offset(sj);
                        offset_slot([oj[0] - ok[0], oj[1] - ok[1], oj[2] - ok[2]]).map(|skj| (sj, skj))
                    })
                    .collect()
            })
            .collect();
        let mut lu = a.clone();
        let n = lu.spec.len();
        for i in 0..n {
            for sk in 0..DIAG {
                let aik = lu.vals[i * SLOTS + sk];
                if aik == 0.0 {
                    continue;
                }
                let Some(k) = lu.neighbor(i, sk) else { continue };
                let ukk = lu.vals[k * SLOTS + DIAG];
                let lik = aik / ukk;
                lu.vals[i * SLOTS + sk] = lik;
                for &(sj, skj) in &table[sk] {
                    let ukj = lu.vals[k * SLOTS + skj];
                    if ukj != 0.0 {
                        lu.vals[i * SLOTS + sj] -= lik * ukj;
                    }
                }
            }
        }
        Self { lu, table }
    }

    /// Solves `LU z = r`.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.lu.spec.len();
        let deltas: Vec<isize> = (0..SLOTS).map(|s| self.lu.slot_delta(s)).collect();
        let v = &self.lu.vals;
        for i in 0..n {
            let mut acc = r[i];
            for s in 0..DIAG {
                let l = v[i * SLOTS + s];
                if l != 0.0 {
                    acc -= l * z[(i as isize + deltas[s]) as usize];
                }
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for s in (DIAG + 1)..SLOTS {
                let u = v[i * SLOTS + s];
                if u != 0.0 {
                    acc -= u * z[(i as isize + deltas[s]) as usize];
                }
            }
            z[i] = acc / v[i * SLOTS + DIAG];
        }
    }

    pub fn pattern_pairs(&self) -> usize {
        self.table.iter().map(Vec::len).sum()
    }
}

/// Dot product with a fixed chunked reduction order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let parts: Vec<f64> = a.par_chunks(4096).zip(b.par_chunks(4096)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum()).collect();
    parts.iter().sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovStats {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Right-preconditioned BiCGStab for `A x = b` starting from `x = 0`.
pub fn bicgstab(a: &StencilMatrix, m: &Ilu0, b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> KrylovStats {
    let n = b.len();
    x.fill(0.0);
    let bn = norm2(b);
    if bn == 0.0 {
        return KrylovStats { iterations: 0, rel_residual: 0.0, converged: true };
    }
    let mut r = b.to_vec();
    let r0 = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut rel = 1.0;
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            return KrylovStats { iterations: it, rel_residual: rel, converged: false };
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut().zip(&r).zip(&v).for_each(|((pi, ri), vi)| *pi = ri + beta * (*pi - omega * vi));
        m.apply(&p, &mut phat);
        a.matvec(&phat, &mut v);
        alpha = rho / dot(&r0, &v);
        s.par_iter_mut().zip(&r).zip(&v).for_each(|((si, ri), vi)| *si = ri - alpha * vi);
        let sn = norm2(&s);
        if sn / bn <= rtol {
            x.par_iter_mut().zip(&phat).for_each(|(xi, pi)| *xi += alpha * pi);
            return KrylovStats { iterations: it, rel_residual: sn / bn, converged: true };
        }
        m.apply(&s, &mut shat);
        a.matvec(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        x.par_iter_mut().zip(&phat).zip(&shat).for_each(|((xi, pi), si)| *xi += alpha * pi + omega * si);
        r.par_iter_mut().zip(&s).zip(&t).for_each(|((ri, si), ti)| *ri = si - omega * ti);
        rel = norm2(&r) / bn;
        if rel <= rtol {
            return KrylovStats { iterations: it, rel_residual: rel, converged: true };
        }
        if omega == 0.0 {
            return KrylovStats { iterations: it, rel_residual: rel, converged: false };
        }
    }
    KrylovStats { iterations: max_iter, rel_residual: rel, converged: false }
}
