//! Simulation design calibrated to a fitted gravity panel: outcomes are the
//! fitted means times log-normal errors with variance
//! `a / lambda + b * indicator`.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::dgp::{latent_ar1, omega, ErrorVariance};
use super::rng::{normal, stream, StreamKind};
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::math::exp;
use crate::panel::{PairBlock, PanelData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedDesign {
    pub base: PanelData,
    /// Fitted means of the calibration fit, pair-major.
    pub lambda: Vec<f64>,
    /// Slopes of the calibration fit; the simulation truth.
    pub beta: Vec<f64>,
    /// Column of the binary regressor that scales the variance.
    pub indicator: usize,
    pub a: f64,
    pub b: f64,
    pub rho: f64,
}

impl CalibratedDesign {
    pub const DEFAULT_A: f64 = 200_000.0;
    pub const DEFAULT_B: f64 = 0.08;

    pub fn from_fit(base: PanelData, fit: &FitResult, indicator: usize, a: f64, b: f64, rho: f64) -> Result<Self> {
        let k = base.k();
        if indicator >= k {
            return Err(Error::InvalidSpec("indicator column out of range".into()));
        }
        for p in &base.pairs {
            for s in 0..base.n_periods() {
                let v = p.x_at(s, indicator, k);
                if p.present[s] && v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidSpec("variance indicator must be binary".into()));
                }
            }
        }
        if !(a >= 0.0) || !(b >= 0.0) || !(rho.abs() < 1.0) {
            return Err(Error::InvalidSpec("invalid calibration parameters".into()));
        }
        Ok(CalibratedDesign { lambda: fit.lambda.clone(), beta: fit.beta.clone(), base, indicator, a, b, rho })
    }
}

/// One simulated panel from the calibrated design.
pub fn calibrated_draw(design: &CalibratedDesign, seed: u64, rep: u64) -> PanelData {
    let t = design.base.n_periods();
    let k = design.base.k();
    let var = ErrorVariance::Calibrated { a: design.a, b: design.b };
    let mut out = design.base.clone();
    for (p, blk) in out.pairs.iter_mut().enumerate() {
        let z = latent_ar1(seed, rep, blk.i as u64, blk.j as u64, t, design.rho);
        for s in 0..t {
            if !blk.present[s] {
                continue;
            }
            let l = design.lambda[p * t + s];
            let ind = blk.x_at(s, design.indicator, k);
            blk.y[s] = l * omega(var.sigma2(l, ind), z[s]);
        }
    }
    out
}

/// Synthetic gravity panel with trade-sized flows and a staggered binary
/// agreement indicator, used in place of proprietary data.
pub fn synthetic_standin(n: usize, t: usize, seed: u64) -> Result<PanelData> {
    if n < 3 || t < 2 {
        return Err(Error::InvalidSpec("stand-in panel needs n >= 3 and t >= 2".into()));
    }
    let var = ErrorVariance::Calibrated { a: CalibratedDesign::DEFAULT_A, b: CalibratedDesign::DEFAULT_B };
    let mut fe = vec![0.0; 2 * n * t];
    for c in 0..2 * n {
        let mut r = stream(seed, 0, StreamKind::ExporterEffect, c as u64, 0);
        for s in 0..t {
            fe[c * t + s] = 0.5 * normal(&mut r);
        }
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut r = stream(seed, 0, StreamKind::PairEffect, i as u64, j as u64);
            let eta = normal(&mut r);
            let u = normal(&mut r);
            // roughly a third of the pairs sign an agreement at a random date
            let start = if u > 0.43 { ((normal(&mut r).abs() * t as f64) as usize).min(t - 1) } else { t };
            let z = latent_ar1(seed, 0, i as u64, j as u64, t, 0.3);
            let mut y = vec![0.0; t];
            let mut x = vec![0.0; t];
            for s in 0..t {
                let fta = if s >= start { 1.0 } else { 0.0 };
                let l = exp(12.0 + fe[i * t + s] + fe[(n + j) * t + s] + eta + 0.3 * fta);
                y[s] = l * omega(var.sigma2(l, fta), z[s]);
                x[s] = fta;
            }
            pairs.push(PairBlock { i, j, y, x, present: vec![true; t] });
        }
    }
    let labels = |m: usize, pre: &str| -> Vec<alloc::string::String> {
        (0..m).map(|v| alloc::format!("{pre}{v}")).collect()
    };
    Ok(PanelData {
        exporters: labels(n, "C"),
        importers: labels(n, "C"),
        periods: (0..t).map(|s| (2000 + 4 * s).to_string()).collect(),
        regressor_names: vec!["fta".into()],
        pairs,
    })
}
