//! Fixed-effects PPML (and power-family PML) estimation.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::{FeGeometry, FeSystem};
use crate::linalg;
use crate::math::{exp, ln};
use crate::panel::PanelData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeModel {
    /// Exporter-time, importer-time and pair effects.
    ThreeWay,
    /// Exporter-time and importer-time effects only.
    TwoWay,
}

/// Pseudo-likelihood family with score `sum x (y - lambda) lambda^q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Poisson,
    Gamma,
    Power(f64),
}

impl Family {
    pub fn q(self) -> f64 {
        match self {
            Family::Poisson => 0.0,
            Family::Gamma => -1.0,
            Family::Power(q) => q,
        }
    }

    /// Pseudo-log-likelihood contribution of one cell.
    pub fn loglik(self, y: f64, lambda: f64) -> f64 {
        let q = self.q();
        if q == 0.0 {
            if y > 0.0 {
                y * ln(lambda) - lambda
            } else {
                -lambda
            }
        } else if q == -1.0 {
            -y / lambda - ln(lambda)
        } else {
            y * crate::math::pow(lambda, q) / q - crate::math::pow(lambda, q + 1.0) / (q + 1.0)
        }
    }

    /// Deviance contribution `2 (L(y; y) - L(y; lambda))`.
    pub fn deviance(self, y: f64, lambda: f64) -> f64 {
        let sat = if y > 0.0 { self.loglik(y, y) } else { 0.0 };
        2.0 * (sat - self.loglik(y, lambda))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub beta: Vec<f64>,
    /// Fitted means per cell in pair-major order.
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub model: FeModel,
    pub family: Family,
    /// Relative deviance change required for convergence.
    pub tol: f64,
    /// Score tolerance, scaled by `1 + mean(y)`.
    pub foc_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Relative residual tolerance of the fixed-effect projections.
    pub fe_tol: f64,
    pub start: Option<WarmStart>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            model: FeModel::ThreeWay,
            family: Family::Poisson,
            tol: 1e-10,
            foc_tol: 1e-8,
            max_iter: 100,
            max_halvings: 20,
            fe_tol: 1e-13,
            start: None,
        }
    }
}

impl FitOptions {
    pub fn two_way() -> Self {
        FitOptions { model: FeModel::TwoWay, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FeModel,
    pub family: Family,
    pub beta: Vec<f64>,
    /// Exporter-time effects, `alpha[i * T + t]`.
    pub alpha: Vec<f64>,
    /// Importer-time effects, `gamma[j * T + t]`.
    pub gamma: Vec<f64>,
    /// Pair effects in pair order (zero in the two-way model).
    pub eta: Vec<f64>,
    /// Fitted means per cell in pair-major order (zero on absent cells).
    pub lambda: Vec<f64>,
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute score over all parameters at the reported estimate.
    pub max_foc: f64,
    pub fe_solver_iterations: usize,
}

impl FitResult {
    pub fn lambda_pair(&self, p: usize, t: usize) -> &[f64] {
        &self.lambda[p * t..(p + 1) * t]
    }
}

/// Closed-form pair effect given the remaining linear index:
/// `exp(eta) = sum_t y mu^q / sum_t mu^(q+1)` with `mu = exp(x'b + a + g)`.
pub fn profile_eta(y: &[f64], mu: &[f64], q: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, m) in y.iter().zip(mu) {
        if *m > 0.0 {
            num += a * crate::math::pow(*m, q);
            den += crate::math::pow(*m, q + 1.0);
        }
    }
    ln(num) - ln(den)
}

fn check_inputs(panel: &PanelData, opts: &FitOptions) -> Result<()> {
    panel.validate()?;
    if panel.pairs.is_empty() {
        return Err(Error::EmptySample);
    }
    if panel.k() == 0 {
        return Err(Error::InvalidSpec("at least one regressor is required".into()));
    }
    if opts.model == FeModel::ThreeWay && panel.n_periods() < 2 {
        return Err(Error::TooFewPeriods { required: 2, found: panel.n_periods() });
    }
    let q = opts.family.q();
    for p in &panel.pairs {
        if opts.model == FeModel::ThreeWay && !(p.sum_y() > 0.0) {
            return Err(Error::DegeneratePair { i: p.i, j: p.j });
        }
        if q <= -1.0 {
            for (t, (&y, &pr)) in p.y.iter().zip(&p.present).enumerate() {
                if pr && !(y > 0.0) {
                    return Err(Error::GammaZeroOutcome { i: p.i, j: p.j, t });
                }
            }
        }
    }
    Ok(())
}

struct Cells {
    t: usize,
    k: usize,
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    present: Vec<bool>,
}

impl Cells {
    fn new(panel: &PanelData) -> Self {
        let t = panel.n_periods();
        let k = panel.k();
        let mut y = Vec::with_capacity(panel.pairs.len() * t);
        let mut present = Vec::with_capacity(panel.pairs.len() * t);
        let mut x = vec![Vec::with_capacity(panel.pairs.len() * t); k];
        for p in &panel.pairs {
            for s in 0..t {
                y.push(if p.present[s] { p.y[s] } else { 0.0 });
                present.push(p.present[s]);
                for r in 0..k {
                    x[r].push(if p.present[s] { p.x_at(s, r, k) } else { 0.0 });
                }
            }
        }
        Cells { t, k, y, x, present }
    }
}

/// Re-profiles the pair effects of a linear index in place.
fn reprofile(cells: &Cells, pi: &mut [f64], q: f64) {
    let t = cells.t;
    let n = pi.len() / t;
    let mut mu = vec![0.0; t];
    for p in 0..n {
        let base = p * t;
        // shift for numerical range before exponentiating
        let shift = (0..t)
            .filter(|&s| cells.present[base + s])
            .map(|s| pi[base + s])
            .fold(f64::NEG_INFINITY, f64::max);
        for s in 0..t {
            mu[s] = if cells.present[base + s] { exp(pi[base + s] - shift) } else { 0.0 };
        }
        let e = profile_eta(&cells.y[base..base + t], &mu, q);
        for s in 0..t {
            if cells.present[base + s] {
                pi[base + s] += e - shift;
            }
        }
    }
}

fn objective(cells: &Cells, pi: &[f64], family: Family) -> f64 {
    let mut d = 0.0;
    for c in 0..pi.len() {
        if cells.present[c] {
            d += family.deviance(cells.y[c], exp(pi[c]));
        }
    }
    d
}

fn lambda_of(cells: &Cells, pi: &[f64]) -> Vec<f64> {
    pi.iter().zip(&cells.present).map(|(&v, &pr)| if pr { exp(v) } else { 0.0 }).collect()
}

/// Largest absolute score component over the slopes and all fixed effects.
pub(crate) fn max_score(
    panel: &PanelData,
    lambda: &[f64],
    beta_len: usize,
    model: FeModel,
    family: Family,
) -> f64 {
    let geo = FeGeometry::from_panel(panel);
    let t = geo.t;
    let k = beta_len;
    let q = family.q();
    let mut fe = vec![0.0; geo.dim()];
    let mut sb = vec![0.0; k];
    let mut best = 0.0f64;
    for (p, blk) in panel.pairs.iter().enumerate() {
        let mut sp = 0.0;
        for s in 0..t {
            if !blk.present[s] {
                continue;
            }
            let l = lambda[p * t + s];
            let g = (blk.y[s] - l) * if q == 0.0 { 1.0 } else { crate::math::pow(l, q) };
            fe[geo.alpha(blk.i, s)] += g;
            fe[geo.gamma(blk.j, s)] += g;
            sp += g;
            for r in 0..k {
                sb[r] += blk.x_at(s, r, k) * g;
            }
        }
        if model == FeModel::ThreeWay {
            best = best.max(sp.abs());
        }
    }
    fe.iter().chain(sb.iter()).fold(best, |m, v| m.max(v.abs()))
}

/// Estimates the slope parameters and fixed effects by iteratively
/// reweighted least squares with the fixed effects absorbed.
pub fn fit(panel: &PanelData, opts: &FitOptions) -> Result<FitResult> {
    check_inputs(panel, opts)?;
    let cells = Cells::new(panel);
    let geo = FeGeometry::from_panel(panel);
    let (t, k) = (cells.t, cells.k);
    let ncell = cells.y.len();
    let q = opts.family.q();
    let three = opts.model == FeModel::ThreeWay;
    let mean_y = panel.mean_y();
    let foc_bound = opts.foc_tol * (1.0 + mean_y);

    // starting index
    let (mut pi, mut beta, mut in_model) = match &opts.start {
        Some(ws) if ws.lambda.len() == ncell && ws.beta.len() == k => {
            let pi: Vec<f64> = ws
                .lambda
                .iter()
                .zip(&cells.present)
                .map(|(&l, &pr)| if pr && l > 0.0 { ln(l) } else { 0.0 })
                .collect();
            (pi, ws.beta.clone(), true)
        }
        _ => {
            let mut pi = vec![0.0; ncell];
            for p in 0..geo.n_pairs() {
                let base = p * t;
                let n = (0..t).filter(|&s| cells.present[base + s]).count().max(1);
                let m = (0..t).map(|s| cells.y[base + s]).sum::<f64>() / n as f64;
                let m = if m > 0.0 { m } else { mean_y.max(1e-3) };
                for s in 0..t {
                    if cells.present[base + s] {
                        pi[base + s] = ln(0.5 * (cells.y[base + s] + m));
                    }
                }
            }
            (pi, vec![0.0; k], false)
        }
    };
    if three {
        reprofile(&cells, &mut pi, q);
    }
    let mut dev = objective(&cells, &pi, opts.family);
    if !dev.is_finite() {
        return Err(Error::BadFit);
    }

    let mut warm: Vec<Vec<f64>> = vec![Vec::new(); k + 1];
    let mut fe_iters = 0usize;
    let mut checked_collinear = false;
    let mut iterations = 0usize;
    let mut converged = false;
    let mut max_foc = f64::INFINITY;

    while iterations < opts.max_iter {
        iterations += 1;
        let lambda = lambda_of(&cells, &pi);
        let w: Vec<f64> = lambda
            .iter()
            .map(|&l| if l > 0.0 { if q == 0.0 { l } else { crate::math::pow(l, q + 1.0) } } else { 0.0 })
            .collect();
        let z: Vec<f64> = (0..ncell)
            .map(|c| if cells.present[c] { pi[c] + (cells.y[c] - lambda[c]) / lambda[c] } else { 0.0 })
            .collect();
        let sys = FeSystem::new(&geo, &w, opts.model);
        let mut rx = Vec::with_capacity(k);
        for r in 0..k {
            let (res, st) = sys.residualize(&cells.x[r], &mut warm[r], opts.fe_tol)?;
            fe_iters += st.iterations;
            rx.push(res);
        }
        let (rz, st) = sys.residualize(&z, &mut warm[k], opts.fe_tol)?;
        fe_iters += st.iterations;

        let mut g = DMatrix::zeros(k, k);
        let mut h = DVector::zeros(k);
        for a in 0..k {
            for b in 0..=a {
                let v: f64 = (0..ncell).map(|c| w[c] * rx[a][c] * rx[b][c]).sum();
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
            h[a] = (0..ncell).map(|c| w[c] * rx[a][c] * rz[c]).sum();
        }
        if !checked_collinear {
            checked_collinear = true;
            check_collinear(&cells, &w, &rx, &sys)?;
        }
        let new_beta = match linalg::inverse_spd(&g) {
            Some(gi) => gi * h,
            None => return Err(Error::CollinearRegressors { index: k - 1 }),
        };
        let mut pi_new: Vec<f64> = (0..ncell)
            .map(|c| {
                if !cells.present[c] {
                    return 0.0;
                }
                let mut fitted = rz[c];
                for r in 0..k {
                    fitted -= rx[r][c] * new_beta[r];
                }
                z[c] - fitted
            })
            .collect();
        if three {
            reprofile(&cells, &mut pi_new, q);
        }
        let mut dev_new = objective(&cells, &pi_new, opts.family);
        let mut step = 1.0;
        if in_model {
            let mut halvings = 0;
            while !(dev_new <= dev + 1e-12 * dev.abs().max(1.0)) && halvings < opts.max_halvings {
                halvings += 1;
                step *= 0.5;
                for c in 0..ncell {
                    if cells.present[c] {
                        pi_new[c] = pi[c] + step * (pi_new[c] - pi[c]);
                    }
                }
                if three {
                    reprofile(&cells, &mut pi_new, q);
                }
                dev_new = objective(&cells, &pi_new, opts.family);
            }
            if !(dev_new <= dev + 1e-12 * dev.abs().max(1.0)) {
                break;
            }
        } else if !dev_new.is_finite() {
            return Err(Error::BadFit);
        }
        for r in 0..k {
            beta[r] += step * (new_beta[r] - beta[r]);
        }
        let rel = (dev - dev_new).abs() / dev_new.abs().max(0.1);
        pi = pi_new;
        dev = dev_new;
        let lam = lambda_of(&cells, &pi);
        max_foc = max_score(panel, &lam, k, opts.model, opts.family);
        let was_in_model = in_model;
        in_model = true;
        if was_in_model && rel < opts.tol && max_foc < foc_bound {
            converged = true;
            break;
        }
    }

    let lambda = lambda_of(&cells, &pi);
    if lambda.iter().any(|l| !l.is_finite()) {
        return Err(Error::BadFit);
    }
    let (alpha, gamma, eta) = decompose(&cells, &geo, &pi, &beta, opts.model, opts.fe_tol)?;
    let res = FitResult {
        model: opts.model,
        family: opts.family,
        beta,
        alpha,
        gamma,
        eta,
        lambda,
        deviance: dev,
        iterations,
        converged,
        max_foc,
        fe_solver_iterations: fe_iters,
    };
    if !converged {
        return Err(Error::NotConverged(Box::new(res)));
    }
    Ok(res)
}

fn check_collinear(cells: &Cells, w: &[f64], rx: &[Vec<f64>], sys: &FeSystem<'_>) -> Result<()> {
    let k = cells.k;
    let ncell = w.len();
    let t = cells.t;
    // residual variation relative to the weighted total variation
    for r in 0..k {
        let wsum: f64 = w.iter().sum();
        let mean: f64 = (0..ncell).map(|c| w[c] * cells.x[r][c]).sum::<f64>() / wsum;
        let tot: f64 = (0..ncell)
            .filter(|&c| cells.present[c])
            .map(|c| w[c] * (cells.x[r][c] - mean) * (cells.x[r][c] - mean))
            .sum();
        let res: f64 = (0..ncell).map(|c| w[c] * rx[r][c] * rx[r][c]).sum();
        if !(res > 1e-10 * tot) || tot == 0.0 {
            return Err(Error::CollinearRegressors { index: r });
        }
    }
    let _ = (sys, t);
    // sequential check against earlier regressors
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for r in 0..k {
        let mut v = rx[r].clone();
        let norm0: f64 = (0..ncell).map(|c| w[c] * v[c] * v[c]).sum();
        for b in &basis {
            let nb: f64 = (0..ncell).map(|c| w[c] * b[c] * b[c]).sum();
            let proj: f64 = (0..ncell).map(|c| w[c] * b[c] * v[c]).sum::<f64>() / nb;
            for c in 0..ncell {
                v[c] -= proj * b[c];
            }
        }
        let norm1: f64 = (0..ncell).map(|c| w[c] * v[c] * v[c]).sum();
        if !(norm1 > 1e-10 * norm0) {
            return Err(Error::CollinearRegressors { index: r });
        }
        basis.push(v);
    }
    Ok(())
}

/// Splits the fixed-effect part of the index into normalized components:
/// exporter-time effects sum to zero over exporters and over periods,
/// importer-time effects sum to zero over periods, and the pair effects
/// absorb the remaining level.
fn decompose(
    cells: &Cells,
    geo: &FeGeometry,
    pi: &[f64],
    beta: &[f64],
    model: FeModel,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let t = cells.t;
    let ncell = pi.len();
    let f: Vec<f64> = (0..ncell)
        .map(|c| {
            if !cells.present[c] {
                return 0.0;
            }
            let mut v = pi[c];
            for (r, b) in beta.iter().enumerate() {
                v -= cells.x[r][c] * b;
            }
            v
        })
        .collect();
    let ones: Vec<f64> = cells.present.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
    let sys = FeSystem::new(geo, &ones, model);
    let mut phi = Vec::new();
    sys.residualize(&f, &mut phi, tol.max(1e-14))?;
    let np = geo.n_pairs();
    let mut eta = vec![0.0; np];
    if model == FeModel::ThreeWay {
        let mut u = vec![0.0; t];
        for p in 0..np {
            geo.expand(p, &phi, &mut u);
            let mut s = 0.0;
            let mut n = 0.0;
            for r in 0..t {
                if cells.present[p * t + r] {
                    s += f[p * t + r] - u[r];
                    n += 1.0;
                }
            }
            eta[p] = if n > 0.0 { s / n } else { 0.0 };
        }
    }
    let (ne, ni) = (geo.n_exp, geo.n_imp);
    let mut alpha: Vec<f64> = phi[..ne * t].to_vec();
    let mut gamma: Vec<f64> = phi[ne * t..].to_vec();
    if model == FeModel::ThreeWay {
        let mut a_shift = vec![0.0; ne];
        for i in 0..ne {
            let m = (0..t).map(|s| alpha[i * t + s]).sum::<f64>() / t as f64;
            a_shift[i] = m;
            for s in 0..t {
                alpha[i * t + s] -= m;
            }
        }
        for s in 0..t {
            let m = (0..ne).map(|i| alpha[i * t + s]).sum::<f64>() / ne as f64;
            for i in 0..ne {
                alpha[i * t + s] -= m;
            }
            for j in 0..ni {
                gamma[j * t + s] += m;
            }
        }
        let mut g_shift = vec![0.0; ni];
        for j in 0..ni {
            let m = (0..t).map(|s| gamma[j * t + s]).sum::<f64>() / t as f64;
            g_shift[j] = m;
            for s in 0..t {
                gamma[j * t + s] -= m;
            }
        }
        for (p, &(i, j)) in geo.pair_ij.iter().enumerate() {
            eta[p] += a_shift[i] + g_shift[j];
        }
    } else {
        for s in 0..t {
            let m = (0..ne).map(|i| alpha[i * t + s]).sum::<f64>() / ne as f64;
            for i in 0..ne {
                alpha[i * t + s] -= m;
            }
            for j in 0..ni {
                gamma[j * t + s] += m;
            }
        }
    }
    Ok((alpha, gamma, eta))
}

/// Weighted within transformation of the regressors at a fitted model:
/// residuals after projecting on all fixed effects with weights
/// `lambda^(q+1)`. Returned per regressor in pair-major cell order.
pub(crate) fn within_regressors(
    panel: &PanelData,
    lambda: &[f64],
    model: FeModel,
    family: Family,
    tol: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let cells = Cells::new(panel);
    let geo = FeGeometry::from_panel(panel);
    let q = family.q();
    let w: Vec<f64> = lambda
        .iter()
        .map(|&l| if l > 0.0 { if q == 0.0 { l } else { crate::math::pow(l, q + 1.0) } } else { 0.0 })
        .collect();
    let sys = FeSystem::new(&geo, &w, model);
    let mut out = Vec::with_capacity(cells.k);
    for r in 0..cells.k {
        let mut warm = Vec::new();
        let (res, _) = sys.residualize(&cells.x[r], &mut warm, tol)?;
        out.push(res);
    }
    Ok((out, w))
}

/// Cluster-robust (by pair) sandwich variance of the slope estimates.
pub fn cluster_robust_vcov(panel: &PanelData, fit: &FitResult) -> Result<DMatrix<f64>> {
    let k = panel.k();
    let t = panel.n_periods();
    let q = fit.family.q();
    let (xt, w) = within_regressors(panel, &fit.lambda, fit.model, fit.family, 1e-13)?;
    let mut bread = DMatrix::zeros(k, k);
    let mut meat = DMatrix::zeros(k, k);
    let mut sc = DVector::zeros(k);
    for (p, blk) in panel.pairs.iter().enumerate() {
        sc.fill(0.0);
        for s in 0..t {
            let c = p * t + s;
            if !blk.present[s] {
                continue;
            }
            let l = fit.lambda[c];
            let g = (blk.y[s] - l) * if q == 0.0 { 1.0 } else { crate::math::pow(l, q) };
            for a in 0..k {
                sc[a] += xt[a][c] * g;
                for b in 0..k {
                    bread[(a, b)] += w[c] * xt[a][c] * xt[b][c];
                }
            }
        }
        meat += &sc * sc.transpose();
    }
    // bread must retain variation relative to the raw regressors
    let mut raw = 0.0f64;
    for (p, blk) in panel.pairs.iter().enumerate() {
        for s in 0..t {
            for a in 0..k {
                let v = blk.x_at(s, a, k);
                raw = raw.max(w[p * t + s] * v * v);
            }
        }
    }
    let ev = linalg::sym_eigenvalues(&bread);
    if ev.is_empty() || !(ev[0] > 1e-12 * raw) {
        return Err(Error::SingularW);
    }
    let bi = linalg::inverse_spd(&bread).ok_or(Error::SingularW)?;
    let v = &bi * meat * &bi;
    Ok((&v + v.transpose()) * 0.5)
}
