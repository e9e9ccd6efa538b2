//! Absorption of exporter-time and importer-time fixed effects.
//!
//! The pair effects are eliminated exactly by weighted within-pair
//! demeaning; the remaining exporter-time and importer-time effects are
//! solved from their (singular) normal equations by preconditioned conjugate
//! gradients, or densely for small systems.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::FeModel;
use crate::linalg;
use crate::panel::PanelData;

/// Fixed-effect systems up to this dimension are also solvable densely.
pub(crate) const DENSE_MAX_DIM: usize = 2500;

/// Index layout of the exporter-time and importer-time effects.
#[derive(Debug, Clone)]
pub(crate) struct FeGeometry {
    pub n_exp: usize,
    pub n_imp: usize,
    pub t: usize,
    pub pair_ij: Vec<(usize, usize)>,
    pub present: Vec<bool>,
}

impl FeGeometry {
    pub fn from_panel(panel: &PanelData) -> Self {
        let t = panel.n_periods();
        let mut present = Vec::with_capacity(panel.pairs.len() * t);
        for p in &panel.pairs {
            present.extend_from_slice(&p.present);
        }
        FeGeometry {
            n_exp: panel.n_exporters(),
            n_imp: panel.n_importers(),
            t,
            pair_ij: panel.pairs.iter().map(|p| (p.i, p.j)).collect(),
            present,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        (self.n_exp + self.n_imp) * self.t
    }

    #[inline]
    pub fn alpha(&self, i: usize, s: usize) -> usize {
        i * self.t + s
    }

    #[inline]
    pub fn gamma(&self, j: usize, s: usize) -> usize {
        (self.n_exp + j) * self.t + s
    }

    #[inline]
    pub fn n_pairs(&self) -> usize {
        self.pair_ij.len()
    }

    /// `d phi` for pair `p`: `alpha_it + gamma_jt` on present cells.
    #[inline]
    pub fn expand(&self, p: usize, phi: &[f64], out: &mut [f64]) {
        let (i, j) = self.pair_ij[p];
        let t = self.t;
        for s in 0..t {
            out[s] = if self.present[p * t + s] {
                phi[self.alpha(i, s)] + phi[self.gamma(j, s)]
            } else {
                0.0
            };
        }
    }
}

/// Weighted fixed-effect normal equations for a given set of cell weights.
///
/// In the three-way model the pair block of the weight matrix is
/// `W - w w' / (1'w)`, the weight matrix with the pair effect partialled
/// out; in the two-way model it is `W` itself.
pub(crate) struct FeSystem<'a> {
    pub geo: &'a FeGeometry,
    pub w: &'a [f64],
    pub model: FeModel,
    wsum: Vec<f64>,
    diag: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SolveStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

impl<'a> FeSystem<'a> {
    pub fn new(geo: &'a FeGeometry, w: &'a [f64], model: FeModel) -> Self {
        let t = geo.t;
        let mut wsum = vec![0.0; geo.n_pairs()];
        let mut diag = vec![0.0; geo.dim()];
        for p in 0..geo.n_pairs() {
            let (i, j) = geo.pair_ij[p];
            let wp = &w[p * t..(p + 1) * t];
            let tot: f64 = wp.iter().sum();
            wsum[p] = tot;
            for s in 0..t {
                let h = match model {
                    FeModel::ThreeWay if tot > 0.0 => wp[s] - wp[s] * wp[s] / tot,
                    FeModel::ThreeWay => 0.0,
                    FeModel::TwoWay => wp[s],
                };
                diag[geo.alpha(i, s)] += h;
                diag[geo.gamma(j, s)] += h;
            }
        }
        FeSystem { geo, w, model, wsum, diag }
    }

    /// Applies the pair weight block to `u` in place.
    #[inline]
    pub fn apply_pair(&self, p: usize, u: &mut [f64]) {
        let t = self.geo.t;
        let wp = &self.w[p * t..(p + 1) * t];
        match self.model {
            FeModel::TwoWay => {
                for s in 0..t {
                    u[s] *= wp[s];
                }
            }
            FeModel::ThreeWay => {
                let tot = self.wsum[p];
                if tot <= 0.0 {
                    u.iter_mut().for_each(|v| *v = 0.0);
                    return;
                }
                let m: f64 = wp.iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>() / tot;
                for s in 0..t {
                    u[s] = wp[s] * (u[s] - m);
                }
            }
        }
    }

    /// Removes the weighted pair mean in place (three-way only).
    #[inline]
    pub fn demean_pair(&self, p: usize, u: &mut [f64]) {
        if self.model == FeModel::TwoWay {
            return;
        }
        let t = self.geo.t;
        let wp = &self.w[p * t..(p + 1) * t];
        let tot = self.wsum[p];
        if tot <= 0.0 {
            return;
        }
        let m: f64 = wp.iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>() / tot;
        for s in 0..t {
            if self.geo.present[p * t + s] {
                u[s] -= m;
            }
        }
    }

    fn scatter(&self, p: usize, v: &[f64], out: &mut [f64]) {
        let (i, j) = self.geo.pair_ij[p];
        for s in 0..self.geo.t {
            out[self.geo.alpha(i, s)] += v[s];
            out[self.geo.gamma(j, s)] += v[s];
        }
    }

    pub fn matvec(&self, phi: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut u = vec![0.0; self.geo.t];
        for p in 0..self.geo.n_pairs() {
            self.geo.expand(p, phi, &mut u);
            self.apply_pair(p, &mut u);
            self.scatter(p, &u, out);
        }
    }

    /// Right-hand side `sum_p d_p' H_p v_p` for cell data `v`.
    pub fn rhs(&self, v: &[f64]) -> Vec<f64> {
        let t = self.geo.t;
        let mut out = vec![0.0; self.geo.dim()];
        let mut u = vec![0.0; t];
        for p in 0..self.geo.n_pairs() {
            u.copy_from_slice(&v[p * t..(p + 1) * t]);
            self.apply_pair(p, &mut u);
            self.scatter(p, &u, &mut out);
        }
        out
    }

    /// Jacobi-preconditioned conjugate gradients on the normal equations.
    pub fn solve_cg(&self, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> SolveStats {
        let n = b.len();
        let bnorm = norm(b);
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return SolveStats { iterations: 0, rel_residual: 0.0 };
        }
        let pre: Vec<f64> =
            self.diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
        let mut r = vec![0.0; n];
        self.matvec(x, &mut r);
        for k in 0..n {
            r[k] = b[k] - r[k];
        }
        let mut z: Vec<f64> = r.iter().zip(&pre).map(|(a, b)| a * b).collect();
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        let mut ad = vec![0.0; n];
        let mut it = 0;
        let mut rel = norm(&r) / bnorm;
        while rel > tol && it < max_iter {
            self.matvec(&d, &mut ad);
            let dad = dot(&d, &ad);
            if !(dad > 0.0) {
                break;
            }
            let a = rz / dad;
            for k in 0..n {
                x[k] += a * d[k];
                r[k] -= a * ad[k];
            }
            it += 1;
            // periodic true-residual refresh limits drift
            if it % 50 == 0 {
                self.matvec(x, &mut r);
                for k in 0..n {
                    r[k] = b[k] - r[k];
                }
            }
            for k in 0..n {
                z[k] = r[k] * pre[k];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                d[k] = z[k] + beta * d[k];
            }
            rel = norm(&r) / bnorm;
        }
        SolveStats { iterations: it, rel_residual: rel }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let g = self.geo;
        let t = g.t;
        let dim = g.dim();
        let mut a = DMatrix::zeros(dim, dim);
        for p in 0..g.n_pairs() {
            let (i, j) = g.pair_ij[p];
            let wp = &self.w[p * t..(p + 1) * t];
            let tot = self.wsum[p];
            for s in 0..t {
                for r in 0..t {
                    let mut h = if s == r { wp[s] } else { 0.0 };
                    if self.model == FeModel::ThreeWay {
                        h = if tot > 0.0 { h - wp[s] * wp[r] / tot } else { 0.0 };
                    }
                    if h == 0.0 {
                        continue;
                    }
                    let (as_, gs) = (g.alpha(i, s), g.gamma(j, s));
                    let (ar, gr) = (g.alpha(i, r), g.gamma(j, r));
                    a[(as_, ar)] += h;
                    a[(as_, gr)] += h;
                    a[(gs, ar)] += h;
                    a[(gs, gr)] += h;
                }
            }
        }
        a
    }

    /// Known null directions of the normal-equation matrix: effects shifted
    /// by a pair-absorbable constant, the exporter/importer time shift, and
    /// effects that touch no informative cell.
    pub fn null_basis(&self) -> DMatrix<f64> {
        let g = self.geo;
        let t = g.t;
        let dim = g.dim();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if self.model == FeModel::ThreeWay {
            for i in 0..g.n_exp {
                let mut c = vec![0.0; dim];
                for s in 0..t {
                    c[g.alpha(i, s)] = 1.0;
                }
                cols.push(c);
            }
            for j in 0..g.n_imp {
                let mut c = vec![0.0; dim];
                for s in 0..t {
                    c[g.gamma(j, s)] = 1.0;
                }
                cols.push(c);
            }
        }
        for s in 0..t {
            let mut c = vec![0.0; dim];
            for i in 0..g.n_exp {
                c[g.alpha(i, s)] = 1.0;
            }
            for j in 0..g.n_imp {
                c[g.gamma(j, s)] = -1.0;
            }
            cols.push(c);
        }
        for (k, &d) in self.diag.iter().enumerate() {
            if d <= 0.0 {
                let mut c = vec![0.0; dim];
                c[k] = 1.0;
                cols.push(c);
            }
        }
        let mut m = DMatrix::zeros(dim, cols.len());
        for (c, col) in cols.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        m
    }

    /// Generalized inverse of the normal-equation matrix, its rank and
    /// whether the eigen-decomposition fallback was needed.
    pub fn ginv(&self) -> (DMatrix<f64>, usize, bool) {
        let a = self.dense();
        linalg::ginv_with_null(&a, &self.null_basis())
    }

    /// Solves for `phi` and returns the weighted residual of `v` after
    /// removing all fixed effects. `warm` carries the effect estimates
    /// between calls.
    pub fn residualize(&self, v: &[f64], warm: &mut Vec<f64>, tol: f64) -> Result<(Vec<f64>, SolveStats)> {
        let g = self.geo;
        let t = g.t;
        let b = self.rhs(v);
        if warm.len() != g.dim() {
            *warm = vec![0.0; g.dim()];
        }
        let max_iter = 20 * g.dim() + 100;
        let mut stats = self.solve_cg(&b, warm, tol, max_iter);
        if stats.rel_residual > tol {
            if g.dim() <= DENSE_MAX_DIM {
                let (gi, _, _) = self.ginv();
                let sol = &gi * DVector::from_column_slice(&b);
                warm.copy_from_slice(sol.as_slice());
                let mut ax = vec![0.0; g.dim()];
                self.matvec(warm, &mut ax);
                let bn = norm(&b);
                let rr = norm(&ax.iter().zip(&b).map(|(a, c)| a - c).collect::<Vec<_>>());
                stats.rel_residual = if bn > 0.0 { rr / bn } else { 0.0 };
            }
            if stats.rel_residual > libm::sqrt(tol).max(1e-8) {
                return Err(Error::ProjectionNotConverged { residual: stats.rel_residual });
            }
        }
        let mut out = v.to_vec();
        let mut u = vec![0.0; t];
        for p in 0..g.n_pairs() {
            g.expand(p, warm, &mut u);
            let o = &mut out[p * t..(p + 1) * t];
            for s in 0..t {
                if g.present[p * t + s] {
                    o[s] -= u[s];
                } else {
                    o[s] = 0.0;
                }
            }
            self.demean_pair(p, o);
        }
        Ok((out, stats))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}
