//! Incidental-parameter bias of three-way PPML: plug-in score and Hessian
//! objects, the analytical bias estimate, and the bias-corrected
//! cluster-robust variance.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{within_regressors, FeModel, Family, FitResult};
use crate::fe::{FeGeometry, FeSystem};
use crate::linalg;
use crate::panel::PanelData;

/// Per-pair plug-in quantities evaluated at a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasObjects {
    pub model: FeModel,
    pub t: usize,
    pub k: usize,
    pub n_exporters: usize,
    pub n_importers: usize,
    pub pair_ij: Vec<(usize, usize)>,
    pub present: Vec<bool>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Within-pair shares of the fitted means.
    pub theta: Vec<f64>,
    pub sum_y: Vec<f64>,
    pub sum_lambda: Vec<f64>,
    /// Pair scores `y - theta * sum(y)` (three-way) or `y - lambda`
    /// (two-way).
    pub s_hat: Vec<f64>,
    /// Within-transformed regressors, `x_tilde[c * k + r]`.
    pub x_tilde: Vec<f64>,
}

impl BiasObjects {
    pub fn n_pairs(&self) -> usize {
        self.pair_ij.len()
    }

    fn cell(&self, p: usize) -> core::ops::Range<usize> {
        p * self.t..(p + 1) * self.t
    }

    /// Expected Hessian block `Lambda - lambda lambda' / sum(lambda)` of a
    /// pair (just `Lambda` in the two-way model).
    pub fn h_bar(&self, p: usize) -> DMatrix<f64> {
        let l = &self.lambda[self.cell(p)];
        let t = self.t;
        let mut h = DMatrix::from_diagonal(&DVector::from_column_slice(l));
        if self.model == FeModel::ThreeWay && self.sum_lambda[p] > 0.0 {
            for a in 0..t {
                for b in 0..t {
                    h[(a, b)] -= l[a] * l[b] / self.sum_lambda[p];
                }
            }
        }
        h
    }

    /// Observed Hessian block `sum(y) (diag(theta) - theta theta')`.
    pub fn h_hat(&self, p: usize) -> DMatrix<f64> {
        let th = &self.theta[self.cell(p)];
        let t = self.t;
        let n = self.sum_y[p];
        DMatrix::from_fn(t, t, |a, b| n * (if a == b { th[a] } else { 0.0 } - th[a] * th[b]))
    }

    /// Third-derivative tensor of the profiled pair log-likelihood,
    /// scaled by `sum(lambda)`; entry `[a][b][c]` at `a * T * T + b * T + c`.
    pub fn g_bar(&self, p: usize) -> Vec<f64> {
        g_tensor(&self.theta[self.cell(p)], self.sum_lambda[p])
    }

    /// Same tensor scaled by `sum(y)`.
    pub fn g_hat(&self, p: usize) -> Vec<f64> {
        g_tensor(&self.theta[self.cell(p)], self.sum_y[p])
    }

    pub fn x_tilde_pair(&self, p: usize) -> DMatrix<f64> {
        let t = self.t;
        let k = self.k;
        DMatrix::from_fn(t, k, |s, r| self.x_tilde[(p * t + s) * k + r])
    }

    pub fn s_pair(&self, p: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.s_hat[self.cell(p)])
    }

    fn x_col(&self, p: usize, r: usize) -> DVector<f64> {
        let t = self.t;
        DVector::from_fn(t, |s, _| self.x_tilde[(p * t + s) * self.k + r])
    }

    /// Largest weighted within-transformation score relative to its gross
    /// magnitude, over all exporter-time, importer-time and pair rows.
    pub fn within_foc(&self) -> f64 {
        let t = self.t;
        let dim = (self.n_exporters + self.n_importers) * t;
        let mut worst = 0.0f64;
        for r in 0..self.k {
            let mut net = vec![0.0; dim];
            let mut gross = vec![0.0; dim];
            let mut pair_net = vec![0.0; self.n_pairs()];
            let mut pair_gross = 0.0f64;
            for (p, &(i, j)) in self.pair_ij.iter().enumerate() {
                let hx = self.h_bar(p) * self.x_col(p, r);
                let (mut ps, mut pg) = (0.0, 0.0);
                for s in 0..t {
                    for idx in [i * t + s, (self.n_exporters + j) * t + s] {
                        net[idx] += hx[s];
                        gross[idx] += hx[s].abs();
                    }
                    let v = self.lambda[p * t + s] * self.x_tilde[(p * t + s) * self.k + r];
                    ps += v;
                    pg += v.abs();
                }
                pair_net[p] = ps;
                pair_gross = pair_gross.max(pg);
            }
            if self.model == FeModel::ThreeWay && pair_gross > 0.0 {
                worst = pair_net.iter().fold(worst, |m, v| m.max(v.abs() / pair_gross));
            }
            let scale = gross.iter().fold(0.0f64, |m, v| m.max(*v));
            if scale > 0.0 {
                worst = net.iter().fold(worst, |m, v| m.max(v.abs() / scale));
            }
        }
        worst
    }
}

/// Five-branch closed form of `-n sum_u theta_u (e_u - theta)^{(x)3}`.
fn g_tensor(th: &[f64], n: f64) -> Vec<f64> {
    let t = th.len();
    let mut g = vec![0.0; t * t * t];
    for a in 0..t {
        for b in 0..t {
            for c in 0..t {
                let v = if a == b && b == c {
                    -n * th[a] * (1.0 - th[a]) * (1.0 - 2.0 * th[a])
                } else if a == b {
                    n * th[a] * th[c] * (1.0 - 2.0 * th[a])
                } else if a == c {
                    n * th[a] * th[b] * (1.0 - 2.0 * th[a])
                } else if b == c {
                    n * th[b] * th[a] * (1.0 - 2.0 * th[b])
                } else {
                    -2.0 * n * th[a] * th[b] * th[c]
                };
                g[(a * t + b) * t + c] = v;
            }
        }
    }
    g
}

/// Within-transformed regressors: residuals of `x` after projecting on all
/// fixed effects in the metric of the fitted expected Hessian. Returned as
/// `x_tilde[c * k + r]` in pair-major cell order.
pub fn within_transform(panel: &PanelData, fit: &FitResult) -> Result<Vec<f64>> {
    let (cols, _) = within_regressors(panel, &fit.lambda, fit.model, Family::Poisson, 1e-14)?;
    let k = cols.len();
    let n = cols.first().map_or(0, |c| c.len());
    let mut out = vec![0.0; n * k];
    for (r, col) in cols.iter().enumerate() {
        for c in 0..n {
            out[c * k + r] = col[c];
        }
    }
    Ok(out)
}

/// Assembles the plug-in objects at a Poisson fit.
pub fn bias_objects(panel: &PanelData, fit: &FitResult) -> Result<BiasObjects> {
    if fit.family != Family::Poisson {
        return Err(Error::InvalidSpec("bias objects require a Poisson fit".into()));
    }
    let t = panel.n_periods();
    let np = panel.pairs.len();
    if fit.lambda.len() != np * t {
        return Err(Error::InvalidSpec("fit does not match panel".into()));
    }
    let x_tilde = within_transform(panel, fit)?;
    let mut y = Vec::with_capacity(np * t);
    let mut present = Vec::with_capacity(np * t);
    let mut theta = Vec::with_capacity(np * t);
    let mut s_hat = Vec::with_capacity(np * t);
    let mut sum_y = Vec::with_capacity(np);
    let mut sum_lambda = Vec::with_capacity(np);
    for (p, blk) in panel.pairs.iter().enumerate() {
        let l = &fit.lambda[p * t..(p + 1) * t];
        let sl: f64 = l.iter().sum();
        let sy = blk.sum_y();
        if !(sl > 0.0) || !sl.is_finite() {
            return Err(Error::BadFit);
        }
        sum_y.push(sy);
        sum_lambda.push(sl);
        for s in 0..t {
            let th = l[s] / sl;
            theta.push(th);
            y.push(blk.y[s]);
            present.push(blk.present[s]);
            s_hat.push(match fit.model {
                FeModel::ThreeWay => blk.y[s] - th * sy,
                FeModel::TwoWay => blk.y[s] - l[s],
            });
        }
    }
    Ok(BiasObjects {
        model: fit.model,
        t,
        k: panel.k(),
        n_exporters: panel.n_exporters(),
        n_importers: panel.n_importers(),
        pair_ij: panel.pairs.iter().map(|p| (p.i, p.j)).collect(),
        present,
        y,
        lambda: fit.lambda.clone(),
        theta,
        sum_y,
        sum_lambda,
        s_hat,
        x_tilde,
    })
}

/// Exporter-side and importer-side bias components, one entry per
/// regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasComponents {
    pub b: Vec<f64>,
    pub d: Vec<f64>,
    /// Smallest pseudoinverse rank over exporter blocks and importer blocks.
    pub min_rank_exporter: usize,
    pub min_rank_importer: usize,
}

fn require_three_way(obj: &BiasObjects) -> Result<()> {
    if obj.model != FeModel::ThreeWay {
        return Err(Error::TwoWayBiasUnsupported);
    }
    if obj.n_exporters < 2 || obj.n_importers < 2 {
        return Err(Error::InvalidSpec("bias correction needs at least two exporters and two importers".into()));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Side {
    Exporter,
    Importer,
}

fn groups(obj: &BiasObjects, side: Side) -> Vec<Vec<usize>> {
    let n = match side {
        Side::Exporter => obj.n_exporters,
        Side::Importer => obj.n_importers,
    };
    let mut g = vec![Vec::new(); n];
    for (p, &(i, j)) in obj.pair_ij.iter().enumerate() {
        g[match side {
            Side::Exporter => i,
            Side::Importer => j,
        }]
        .push(p);
    }
    g
}

/// Pseudoinverse of a summed Hessian block, checking that its rank equals
/// the number of informative periods minus one.
fn block_pinv(a: &DMatrix<f64>, side: Side, index: usize) -> Result<(DMatrix<f64>, usize)> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let support = a.diagonal().iter().filter(|&&v| v > 1e-14 * scale).count();
    let (p, rank) = linalg::pinv_sym(a, linalg::PINV_RTOL);
    let expected = support.saturating_sub(1);
    if rank < expected {
        return Err(Error::RankDeficientFeBlock {
            role: match side {
                Side::Exporter => "exporter",
                Side::Importer => "importer",
            },
            index,
            rank,
            expected,
        });
    }
    Ok((p, rank))
}

fn contract_g(g: &[f64], x: &DVector<f64>, t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, t, |s, u| (0..t).map(|r| g[(r * t + s) * t + u] * x[r]).sum())
}

fn side_sum_tensor(obj: &BiasObjects, side: Side) -> Result<(Vec<f64>, usize)> {
    let t = obj.t;
    let k = obj.k;
    let mut total = vec![0.0; k];
    let mut min_rank = usize::MAX;
    for (idx, members) in groups(obj, side).iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut a = DMatrix::zeros(t, t);
        let mut c2 = DMatrix::zeros(t, t);
        for &p in members {
            a += obj.h_bar(p);
            let s = obj.s_pair(p);
            c2 += &s * s.transpose();
        }
        let (ap, rank) = block_pinv(&a, side, idx)?;
        min_rank = min_rank.min(rank);
        let middle = &ap * &c2 * &ap;
        for r in 0..k {
            let mut first = 0.0;
            let mut e = DMatrix::zeros(t, t);
            for &p in members {
                let x = obj.x_col(p, r);
                let hx = obj.h_hat(p) * &x;
                first += obj.s_pair(p).dot(&(&ap * hx));
                e += contract_g(&obj.g_bar(p), &x, t);
            }
            let second = 0.5 * (&e * &middle).trace();
            total[r] += -first + second;
        }
    }
    Ok((total, min_rank))
}

/// Plug-in estimates of the exporter-side (`b`) and importer-side (`d`)
/// bias terms, normalized by the number of exporters (importers) minus one.
pub fn compute_b_d(obj: &BiasObjects) -> Result<BiasComponents> {
    require_three_way(obj)?;
    let (b, rb) = side_sum_tensor(obj, Side::Exporter)?;
    let (d, rd) = side_sum_tensor(obj, Side::Importer)?;
    let me = (obj.n_exporters - 1) as f64;
    let mi = (obj.n_importers - 1) as f64;
    Ok(BiasComponents {
        b: b.iter().map(|v| v / me).collect(),
        d: d.iter().map(|v| v / mi).collect(),
        min_rank_exporter: rb,
        min_rank_importer: rd,
    })
}

fn side_sum_reexpressed(obj: &BiasObjects, side: Side, m: f64) -> Result<(Vec<f64>, usize)> {
    let t = obj.t;
    let k = obj.k;
    let mut total = vec![0.0; k];
    let mut min_rank = usize::MAX;
    let ones = DVector::from_element(t, 1.0);
    for (idx, members) in groups(obj, side).iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        // normalized block averages
        let mut a = DMatrix::zeros(t, t);
        let mut c = DMatrix::zeros(t, t);
        for &p in members {
            let th = DVector::from_column_slice(&obj.theta[obj.cell(p)]);
            let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&obj.lambda[obj.cell(p)]));
            let mt = DMatrix::identity(t, t) - &ones * th.transpose();
            a += &lam * &mt;
            let y = DVector::from_column_slice(&obj.y[obj.cell(p)]);
            let my = mt.transpose() * &y;
            c += &my * my.transpose();
        }
        a /= m;
        c /= m;
        let (ap, rank) = block_pinv(&a, side, idx)?;
        min_rank = min_rank.min(rank);
        let q = &ap * &c * &ap;
        for &p in members {
            let th = DVector::from_column_slice(&obj.theta[obj.cell(p)]);
            let l = DVector::from_column_slice(&obj.lambda[obj.cell(p)]);
            let lam = DMatrix::from_diagonal(&l);
            let mt = DMatrix::identity(t, t) - &ones * th.transpose();
            let y = DVector::from_column_slice(&obj.y[obj.cell(p)]);
            let rmat = &y * (y.transpose() * &mt) * &ap * &lam * &mt;
            let ql = l.transpose() * &q * &lam * &mt;
            let sl = obj.sum_lambda[p];
            for r in 0..k {
                let x = obj.x_col(p, r);
                let term = -(ones.transpose() * &rmat * &x)[0] + (&ql * &x)[0];
                total[r] += term / sl;
            }
        }
    }
    Ok((total.iter().map(|v| v / (m * m)).collect(), min_rank))
}

/// Bias terms through the centering-matrix representation of the pair
/// score and Hessian. Agrees with [`compute_b_d`] whenever the regressors
/// satisfy the within-transformation orthogonality conditions.
pub fn bias_reexpressed(obj: &BiasObjects) -> Result<BiasComponents> {
    require_three_way(obj)?;
    let me = (obj.n_exporters - 1) as f64;
    let mi = (obj.n_importers - 1) as f64;
    let (b, rb) = side_sum_reexpressed(obj, Side::Exporter, me)?;
    let (d, rd) = side_sum_reexpressed(obj, Side::Importer, mi)?;
    Ok(BiasComponents { b, d, min_rank_exporter: rb, min_rank_importer: rd })
}

/// Scalar bias formulas for two-period panels.
pub fn remark_t2_bias(obj: &BiasObjects) -> Result<BiasComponents> {
    require_three_way(obj)?;
    if obj.t != 2 {
        return Err(Error::InvalidSpec("scalar bias formulas need exactly two periods".into()));
    }
    let k = obj.k;
    let side = |side: Side, m: f64| -> Vec<f64> {
        let mut total = vec![0.0; k];
        for members in groups(obj, side) {
            if members.is_empty() {
                continue;
            }
            let mut sh = 0.0;
            let mut ss = 0.0;
            for &p in &members {
                let (t1, t2) = (obj.theta[2 * p], obj.theta[2 * p + 1]);
                let s = t2 * obj.y[2 * p] - t1 * obj.y[2 * p + 1];
                sh += t1 * obj.lambda[2 * p + 1];
                ss += s * s;
            }
            for r in 0..k {
                let mut first = 0.0;
                let mut gx = 0.0;
                for &p in &members {
                    let (t1, t2) = (obj.theta[2 * p], obj.theta[2 * p + 1]);
                    let (y1, y2) = (obj.y[2 * p], obj.y[2 * p + 1]);
                    let s = t2 * y1 - t1 * y2;
                    let dx = obj.x_tilde[(2 * p) * k + r] - obj.x_tilde[(2 * p + 1) * k + r];
                    first += s * (y1 + y2) * t1 * t2 * dx;
                    gx += t1 * (t1 - t2) * obj.lambda[2 * p + 1] * dx;
                }
                total[r] += -first / sh + 0.5 * gx * ss / (sh * sh);
            }
        }
        total.iter().map(|v| v / m).collect()
    };
    Ok(BiasComponents {
        b: side(Side::Exporter, (obj.n_exporters - 1) as f64),
        d: side(Side::Importer, (obj.n_importers - 1) as f64),
        min_rank_exporter: 1,
        min_rank_importer: 1,
    })
}

/// Sum over pairs of `x_tilde' H_bar x_tilde`.
pub fn w_total(obj: &BiasObjects) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(obj.k, obj.k);
    for p in 0..obj.n_pairs() {
        let x = obj.x_tilde_pair(p);
        w += x.transpose() * obj.h_bar(p) * &x;
    }
    (&w + w.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticalCorrection {
    pub beta: Vec<f64>,
    pub correction: Vec<f64>,
    pub beta_corrected: Vec<f64>,
    /// Average Hessian of the slopes, row-major `k x k`.
    pub w_hat: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub d_hat: Vec<f64>,
    pub w_condition: f64,
    pub min_rank_exporter: usize,
    pub min_rank_importer: usize,
}

/// Subtracts the estimated bias `W^{-1} (N_exp B + N_imp D) / n_pairs`
/// from the uncorrected slopes.
pub fn analytical_bias_correct(fit: &FitResult, obj: &BiasObjects) -> Result<AnalyticalCorrection> {
    let comp = compute_b_d(obj)?;
    let k = obj.k;
    let n = obj.n_pairs() as f64;
    let wt = w_total(obj);
    let wi = linalg::inverse_spd(&wt).ok_or(Error::SingularW)?;
    let ne = obj.n_exporters as f64;
    let ni = obj.n_importers as f64;
    let rhs = DVector::from_fn(k, |r, _| ne * comp.b[r] + ni * comp.d[r]);
    let corr = wi * rhs;
    let w_hat = &wt / n;
    Ok(AnalyticalCorrection {
        beta: fit.beta.clone(),
        correction: corr.iter().copied().collect(),
        beta_corrected: fit.beta.iter().zip(corr.iter()).map(|(b, c)| b - c).collect(),
        w_hat: w_hat.transpose().iter().copied().collect(),
        b_hat: comp.b,
        d_hat: comp.d,
        w_condition: linalg::condition_number(&w_hat),
        min_rank_exporter: comp.min_rank_exporter,
        min_rank_importer: comp.min_rank_importer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedVcov {
    /// Bias-corrected variance, row-major `k x k`.
    pub v: Vec<f64>,
    /// Conventional cluster-robust variance, row-major `k x k`.
    pub v_uncorrected: Vec<f64>,
    /// Pairs whose leverage adjustment was singular and that fell back to
    /// the unadjusted score outer product.
    pub fallback_pairs: usize,
    /// Rank of the fixed-effect Hessian.
    pub fe_rank: usize,
    pub fe_dim: usize,
}

impl CorrectedVcov {
    pub fn se(&self, k: usize) -> Vec<f64> {
        (0..k).map(|r| libm::sqrt(self.v[r * k + r])).collect()
    }
    pub fn se_uncorrected(&self, k: usize) -> Vec<f64> {
        (0..k).map(|r| libm::sqrt(self.v_uncorrected[r * k + r])).collect()
    }
}

/// Cluster-robust variance with each pair's score outer product inflated by
/// the inverse of one minus its leverage under the full fixed-effect
/// design, plus the degrees-of-freedom factor `n / (n - 1)`.
pub fn corrected_vcov(obj: &BiasObjects) -> Result<CorrectedVcov> {
    let t = obj.t;
    let k = obj.k;
    let np = obj.n_pairs();
    let geo = FeGeometry {
        n_exp: obj.n_exporters,
        n_imp: obj.n_importers,
        t,
        pair_ij: obj.pair_ij.clone(),
        present: obj.present.clone(),
    };
    let w: Vec<f64> = obj.lambda.clone();
    let sys = FeSystem::new(&geo, &w, obj.model);
    let (g, fe_rank, _) = sys.ginv();
    let wt = w_total(obj);
    let wi = linalg::inverse_spd(&wt).ok_or(Error::SingularW)?;

    let mut meat_u = DMatrix::zeros(k, k);
    let mut meat = DMatrix::zeros(k, k);
    let mut fallback = 0usize;
    for p in 0..np {
        let (i, j) = obj.pair_ij[p];
        let x = obj.x_tilde_pair(p);
        let h = obj.h_bar(p);
        let s = obj.s_pair(p);
        let idx = |s_: usize, alpha: bool| if alpha { geo.alpha(i, s_) } else { geo.gamma(j, s_) };
        let lev = DMatrix::from_fn(t, t, |a, b| {
            if !obj.present[p * t + a] || !obj.present[p * t + b] {
                return 0.0;
            }
            let mut v = 0.0;
            for ra in [true, false] {
                for rb in [true, false] {
                    v += g[(idx(a, ra), idx(b, rb))];
                }
            }
            v
        });
        let proj = &h * (&x * &wi * x.transpose() + lev);
        let kmat = DMatrix::identity(t, t) - proj;
        let xs = x.transpose() * &s;
        meat_u += &xs * xs.transpose();
        let solved = if linalg::lu_rcond(&kmat) > 1e-12 { linalg::solve(&kmat, &s) } else { None };
        let z = match solved {
            Some(z) => z,
            None => {
                fallback += 1;
                s.clone()
            }
        };
        let xz = x.transpose() * z;
        meat += xz * xs.transpose();
    }
    let nf = np as f64;
    let dof = if np > 1 { nf / (nf - 1.0) } else { 1.0 };
    let v = &wi * meat * &wi * dof;
    let v = (&v + v.transpose()) * 0.5;
    let vu = &wi * meat_u * &wi;
    let vu = (&vu + vu.transpose()) * 0.5;
    Ok(CorrectedVcov {
        v: v.transpose().iter().copied().collect(),
        v_uncorrected: vu.transpose().iter().copied().collect(),
        fallback_pairs: fallback,
        fe_rank,
        fe_dim: geo.dim(),
    })
}

/// Summary of every correction applied to a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub analytical: Option<AnalyticalCorrection>,
    pub jackknife: Option<crate::jackknife::JackknifeResult>,
    pub corrected_se: Option<Vec<f64>>,
    pub vcov: Option<CorrectedVcov>,
    pub within_foc: f64,
}
