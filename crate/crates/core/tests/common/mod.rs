//! Random panels and dense reference computations shared by tests.

#![allow(dead_code)]

use gravity_ppml_core::panel::{PairBlock, PanelData};
use gravity_ppml_core::{FeModel, Family};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct PanelShape {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub zero_share: f64,
    pub missing_share: f64,
}

/// Square panel without the diagonal, with log-normal noise, occasional
/// zeros and occasional missing cells.
pub fn random_panel(shape: &PanelShape, seed: u64) -> PanelData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, t, k) = (shape.n, shape.t, shape.k);
    let nrm = |r: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(r) };
    let alpha: Vec<f64> = (0..n * t).map(|_| 0.5 * nrm(&mut rng)).collect();
    let gamma: Vec<f64> = (0..n * t).map(|_| 0.5 * nrm(&mut rng)).collect();
    let beta: Vec<f64> = (0..k).map(|r| 0.5 + 0.25 * r as f64).collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let eta = 0.5 * nrm(&mut rng);
            let mut y = vec![0.0; t];
            let mut x = vec![0.0; t * k];
            let mut present = vec![true; t];
            for s in 0..t {
                let mut idx = alpha[i * t + s] + gamma[j * t + s] + eta;
                for r in 0..k {
                    let v = 0.5 * nrm(&mut rng) + 0.3 * alpha[i * t + s] + 0.2 * eta + 0.1 * (s as f64);
                    x[s * k + r] = v;
                    idx += beta[r] * v;
                }
                let lam = (idx + 1.0).exp();
                y[s] = if rng.random::<f64>() < shape.zero_share { 0.0 } else { lam * (0.5 * nrm(&mut rng) - 0.125).exp() };
                if rng.random::<f64>() < shape.missing_share {
                    present[s] = false;
                    y[s] = 0.0;
                    for r in 0..k {
                        x[s * k + r] = 0.0;
                    }
                }
            }
            pairs.push(PairBlock { i, j, y, x, present });
        }
    }
    PanelData {
        exporters: (0..n).map(|c| format!("c{c}")).collect(),
        importers: (0..n).map(|c| format!("c{c}")).collect(),
        periods: (0..t).map(|s| format!("{s}")).collect(),
        regressor_names: (0..k).map(|r| format!("x{r}")).collect(),
        pairs,
    }
}

/// Full dummy-variable design for the present cells: one row per cell,
/// columns `[x, alpha, gamma, eta]` (eta only in the three-way model).
pub fn dummy_design(panel: &PanelData, model: FeModel) -> (DMatrix<f64>, DVector<f64>, Vec<(usize, usize)>) {
    let (t, k) = (panel.n_periods(), panel.k());
    let (ne, ni, np) = (panel.n_exporters(), panel.n_importers(), panel.pairs.len());
    let ncol = k + (ne + ni) * t + if model == FeModel::ThreeWay { np } else { 0 };
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    let mut cells = Vec::new();
    for (p, b) in panel.pairs.iter().enumerate() {
        for s in 0..t {
            if !b.present[s] {
                continue;
            }
            let mut z = vec![0.0; ncol];
            for r in 0..k {
                z[r] = b.x_at(s, r, k);
            }
            z[k + b.i * t + s] = 1.0;
            z[k + ne * t + b.j * t + s] = 1.0;
            if model == FeModel::ThreeWay {
                z[k + (ne + ni) * t + p] = 1.0;
            }
            rows.push(z);
            ys.push(b.y[s]);
            cells.push((p, s));
        }
    }
    let z = DMatrix::from_fn(rows.len(), ncol, |a, b| rows[a][b]);
    (z, DVector::from_vec(ys), cells)
}

fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().pseudo_inverse(1e-10 * a.amax().max(1e-300)).unwrap()
}

fn loglik(y: &DVector<f64>, idx: &DVector<f64>, q: f64) -> f64 {
    let f = match q {
        q if q == 0.0 => Family::Poisson,
        q if q == -1.0 => Family::Gamma,
        q => Family::Power(q),
    };
    y.iter().zip(idx.iter()).map(|(&a, &b)| f.loglik(a, b.exp())).sum()
}

/// Maximizes the pseudo-likelihood over all dummy coefficients by damped
/// Fisher scoring with a pseudoinverse step. Returns the slopes and the
/// fitted means per present cell.
pub fn dummy_newton(panel: &PanelData, model: FeModel, family: Family) -> (Vec<f64>, Vec<f64>) {
    let (z, y, _) = dummy_design(panel, model);
    let q = family.q();
    let ncol = z.ncols();
    let mean = y.mean().max(1e-3);
    let mut th = DVector::zeros(ncol);
    // intercept-like start through the pair or exporter dummies
    let mut idx = &z * &th;
    idx.iter_mut().for_each(|v| *v = mean.ln());
    let start_fe = pinv(&(z.transpose() * &z)) * z.transpose() * &idx;
    th.copy_from(&start_fe);
    for _ in 0..500 {
        let idx = &z * &th;
        let lam = idx.map(|v| v.exp());
        let g = z.transpose() * DVector::from_fn(y.len(), |c, _| (y[c] - lam[c]) * lam[c].powf(q));
        let w = DVector::from_fn(y.len(), |c, _| lam[c].powf(q + 1.0));
        let h = z.transpose() * DMatrix::from_diagonal(&w) * &z;
        let step = pinv(&h) * &g;
        let base = loglik(&y, &idx, q);
        let mut s = 1.0;
        loop {
            let cand = &th + &step * s;
            if loglik(&y, &(&z * &cand), q) >= base - 1e-12 * base.abs() || s < 1e-8 {
                th = cand;
                break;
            }
            s *= 0.5;
        }
        if step.amax() * s < 1e-13 {
            break;
        }
    }
    let k = panel.k();
    let lam = (&z * &th).map(|v| v.exp());
    ((0..k).map(|r| th[r]).collect(), lam.iter().copied().collect())
}

/// Weighted residual of the regressors after projecting on the dummies of
/// `model`, by dense normal equations. Pair-major cells, absent cells zero.
pub fn dense_within(panel: &PanelData, lambda: &[f64], model: FeModel) -> Vec<Vec<f64>> {
    let (z, _, cells) = dummy_design(panel, model);
    let (t, k) = (panel.n_periods(), panel.k());
    let d = z.columns(k, z.ncols() - k).into_owned();
    let w = DMatrix::from_diagonal(&DVector::from_fn(cells.len(), |c, _| lambda[cells[c].0 * t + cells[c].1]));
    let dwd = d.transpose() * &w * &d;
    let proj = &d * pinv(&dwd) * d.transpose() * &w;
    let mut out = Vec::new();
    for r in 0..k {
        let x = z.column(r).into_owned();
        let res = &x - &proj * &x;
        let mut full = vec![0.0; panel.pairs.len() * t];
        for (c, &(p, s)) in cells.iter().enumerate() {
            full[p * t + s] = res[c];
        }
        out.push(full);
    }
    out
}

/// Bias-corrected cluster-robust variance from the full dense design:
/// leverage of each pair block in the metric of the expected Hessian,
/// exporter-time and importer-time dummies only.
pub fn dense_corrected_vcov(panel: &PanelData, lambda: &[f64], model: FeModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let (t, k) = (panel.n_periods(), panel.k());
    let (ne, ni) = (panel.n_exporters(), panel.n_importers());
    let np = panel.pairs.len();
    let dim = (ne + ni) * t;
    // per pair: expected Hessian block, design rows, score
    let mut hbar = Vec::new();
    let mut zrows = Vec::new();
    let mut scores = Vec::new();
    for (p, b) in panel.pairs.iter().enumerate() {
        let l = &lambda[p * t..(p + 1) * t];
        let sl: f64 = l.iter().sum();
        let sy = b.sum_y();
        let mut h = DMatrix::from_diagonal(&DVector::from_column_slice(l));
        if model == FeModel::ThreeWay {
            h -= DVector::from_column_slice(l) * DVector::from_column_slice(l).transpose() / sl;
        }
        let s = DVector::from_fn(t, |a, _| match model {
            FeModel::ThreeWay => b.y[a] - l[a] / sl * sy,
            FeModel::TwoWay => b.y[a] - l[a],
        });
        let mut zr = DMatrix::zeros(t, k + dim);
        for a in 0..t {
            if !b.present[a] {
                continue;
            }
            for r in 0..k {
                zr[(a, r)] = b.x_at(a, r, k);
            }
            zr[(a, k + b.i * t + a)] = 1.0;
            zr[(a, k + ne * t + b.j * t + a)] = 1.0;
        }
        hbar.push(h);
        zrows.push(zr);
        scores.push(s);
    }
    let mut zhz = DMatrix::zeros(k + dim, k + dim);
    let mut dhd = DMatrix::zeros(dim, dim);
    for p in 0..np {
        zhz += zrows[p].transpose() * &hbar[p] * &zrows[p];
        let d = zrows[p].columns(k, dim).into_owned();
        dhd += d.transpose() * &hbar[p] * &d;
    }
    let zhz_p = pinv(&zhz);
    let dhd_p = pinv(&dhd);
    let mut bread = DMatrix::zeros(k, k);
    let mut meat = DMatrix::zeros(k, k);
    let mut meat_u = DMatrix::zeros(k, k);
    // within-transformed regressors from the dense normal equations
    let mut dhx = DMatrix::zeros(dim, k);
    for q in 0..np {
        let dq = zrows[q].columns(k, dim).into_owned();
        let xq = zrows[q].columns(0, k).into_owned();
        dhx += dq.transpose() * &hbar[q] * xq;
    }
    let phi = &dhd_p * dhx;
    for p in 0..np {
        let d = zrows[p].columns(k, dim).into_owned();
        let x = zrows[p].columns(0, k).into_owned();
        let xt = &x - &d * &phi;
        bread += xt.transpose() * &hbar[p] * &xt;
        let lev = &hbar[p] * &zrows[p] * &zhz_p * zrows[p].transpose();
        let kmat = DMatrix::identity(t, t) - lev;
        let z = kmat.lu().solve(&scores[p]).unwrap();
        meat += (xt.transpose() * z) * (scores[p].transpose() * &xt);
        let xs = xt.transpose() * &scores[p];
        meat_u += &xs * xs.transpose();
    }
    let bi = bread.clone().try_inverse().unwrap();
    let nf = np as f64;
    let v = &bi * meat * &bi * (nf / (nf - 1.0));
    let v = (&v + v.transpose()) * 0.5;
    let vu = &bi * meat_u * &bi;
    (v, vu)
}
