//! Monte Carlo replications and their summary statistics.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::calibrate::{calibrated_draw, CalibratedDesign};
use super::dgp::{generate, DgpSpec};
use crate::bias::{analytical_bias_correct, bias_objects, corrected_vcov};
use crate::error::{Error, Result};
use crate::estimator::{cluster_robust_vcov, fit, Family, FitOptions};
use crate::jackknife::{jackknife_correct, PartitionPlan};
use crate::math::sqrt;
use crate::panel::{prune_sample, PanelData};

/// Fewest replications accepted for a Monte Carlo cell.
pub const MIN_REPS: usize = 50;
/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_SHARE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Design {
    Standard(DgpSpec),
    Calibrated(CalibratedDesign),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub design: Design,
    pub reps: usize,
    pub seed: u64,
    pub family: Family,
    pub analytical: bool,
    pub jackknife: bool,
    pub corrected_se: bool,
    /// Regressor whose estimates are summarized.
    pub target: usize,
}

impl McConfig {
    pub fn new(spec: DgpSpec, reps: usize, seed: u64) -> Self {
        McConfig {
            design: Design::Standard(spec),
            reps,
            seed,
            family: Family::Poisson,
            analytical: true,
            jackknife: true,
            corrected_se: true,
            target: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < MIN_REPS {
            return Err(Error::InvalidSpec(alloc::format!(
                "{} replications requested, at least {MIN_REPS} required",
                self.reps
            )));
        }
        if self.family != Family::Poisson && (self.analytical || self.corrected_se) {
            return Err(Error::InvalidSpec("corrections require the Poisson family".into()));
        }
        match &self.design {
            Design::Standard(s) => {
                s.validate()?;
                if self.jackknife && s.n < 4 {
                    return Err(Error::InvalidSpec("jackknife needs at least 4 countries".into()));
                }
            }
            Design::Calibrated(c) => {
                if self.target >= c.beta.len() {
                    return Err(Error::InvalidSpec("target regressor out of range".into()));
                }
            }
        }
        Ok(())
    }

    pub fn true_beta(&self) -> f64 {
        match &self.design {
            Design::Standard(s) => s.beta,
            Design::Calibrated(c) => c.beta[self.target],
        }
    }

    pub fn draw(&self, rep: u64) -> Result<PanelData> {
        match &self.design {
            Design::Standard(s) => Ok(generate(s, self.seed, rep)?.panel),
            Design::Calibrated(c) => Ok(calibrated_draw(c, self.seed, rep)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: u64,
    pub beta: f64,
    pub se: f64,
    pub beta_analytical: Option<f64>,
    pub beta_jackknife: Option<f64>,
    pub se_corrected: Option<f64>,
    pub fallback_pairs: usize,
    pub jackknife_redraws: usize,
}

/// Runs every requested estimator on one simulated panel.
pub fn run_replication(cfg: &McConfig, rep: u64) -> Result<Replication> {
    let raw = cfg.draw(rep)?;
    let (panel, _) = prune_sample(&raw, crate::estimator::FeModel::ThreeWay)?;
    let opts = FitOptions { family: cfg.family, ..FitOptions::default() };
    let f = fit(&panel, &opts)?;
    let r = cfg.target;
    let k = panel.k();
    let v = cluster_robust_vcov(&panel, &f)?;
    let se = sqrt(v[(r, r)]);
    let mut out = Replication {
        rep,
        beta: f.beta[r],
        se,
        beta_analytical: None,
        beta_jackknife: None,
        se_corrected: None,
        fallback_pairs: 0,
        jackknife_redraws: 0,
    };
    if cfg.analytical || cfg.corrected_se {
        let obj = bias_objects(&panel, &f)?;
        if cfg.analytical {
            out.beta_analytical = Some(analytical_bias_correct(&f, &obj)?.beta_corrected[r]);
        }
        if cfg.corrected_se {
            let cv = corrected_vcov(&obj)?;
            out.se_corrected = Some(sqrt(cv.v[r * k + r]));
            out.fallback_pairs = cv.fallback_pairs;
        }
    }
    if cfg.jackknife {
        let jk = jackknife_correct(&panel, &opts, &PartitionPlan::ordered(), &f.beta)?;
        out.beta_jackknife = Some(jk.beta[r]);
        out.jackknife_redraws = jk.redraws;
    }
    Ok(out)
}

/// Statistics of one estimator paired with one standard-error type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub estimator: String,
    pub se_type: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub avg_bias_x100: f64,
    pub bias_over_se: f64,
    pub se_over_sd: f64,
    pub coverage: f64,
    pub mcse_avg_bias_x100: f64,
    pub mcse_bias_over_se: f64,
    pub mcse_se_over_sd: f64,
    pub mcse_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub reps: usize,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub true_beta: f64,
    pub rows: Vec<McRow>,
}

impl McSummary {
    pub fn row(&self, estimator: &str, se_type: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.se_type == se_type)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    let n = v.len() as f64;
    sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

/// Summary statistics of estimates against a known truth, with Monte Carlo
/// standard errors.
pub fn summarize_draws(estimator: &str, se_type: &str, beta0: f64, est: &[f64], se: &[f64]) -> McRow {
    let n = est.len();
    let nf = n as f64;
    let m = mean(est);
    let s = sd(est);
    let mse = mean(se);
    let sd_se = if n > 1 { sd(se) } else { 0.0 };
    let cover: Vec<f64> = est
        .iter()
        .zip(se)
        .map(|(b, e)| if (b - beta0).abs() <= 1.959963984540054 * e { 1.0 } else { 0.0 })
        .collect();
    let cov = mean(&cover);
    let ratio = mse / s;
    // delta method for the ratio of a mean to a standard deviation
    let mcse_ratio = ratio * sqrt((sd_se / mse) * (sd_se / mse) / nf + 1.0 / (2.0 * (nf - 1.0)));
    McRow {
        estimator: estimator.into(),
        se_type: se_type.into(),
        n,
        mean: m,
        sd: s,
        avg_bias_x100: 100.0 * (m - beta0),
        bias_over_se: (m - beta0) / mse,
        se_over_sd: ratio,
        coverage: cov,
        mcse_avg_bias_x100: 100.0 * s / sqrt(nf),
        mcse_bias_over_se: s / (sqrt(nf) * mse),
        mcse_se_over_sd: mcse_ratio,
        mcse_coverage: sqrt(cov * (1.0 - cov) / nf),
    }
}

/// Aggregates replications; fails when more than one percent failed.
pub fn summarize(cfg: &McConfig, results: &[Result<Replication>]) -> Result<McSummary> {
    let ok: Vec<&Replication> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failures = results.len() - ok.len();
    if ok.len() < 2 || failures as f64 > MAX_FAILURE_SHARE * results.len() as f64 {
        return Err(Error::TooManyFailures { failed: failures, total: results.len() });
    }
    let failure_messages = results
        .iter()
        .filter_map(|r| r.as_ref().err().map(|e| alloc::format!("{e}")))
        .collect();
    let beta0 = cfg.true_beta();
    let se_u: Vec<f64> = ok.iter().map(|r| r.se).collect();
    let se_c: Option<Vec<f64>> = ok.iter().map(|r| r.se_corrected).collect();
    let estimators: [(&str, Option<Vec<f64>>); 3] = [
        ("FE-PPML", Some(ok.iter().map(|r| r.beta).collect())),
        ("Analytical", ok.iter().map(|r| r.beta_analytical).collect()),
        ("Jackknife", ok.iter().map(|r| r.beta_jackknife).collect()),
    ];
    let mut rows = Vec::new();
    for (name, est) in estimators.iter() {
        let Some(est) = est else { continue };
        rows.push(summarize_draws(name, "uncorrected", beta0, est, &se_u));
        if let Some(sc) = &se_c {
            rows.push(summarize_draws(name, "corrected", beta0, est, sc));
        }
    }
    Ok(McSummary { reps: results.len(), failures, failure_messages, true_beta: beta0, rows })
}

/// Sequential Monte Carlo driver.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<McSummary> {
    cfg.validate()?;
    let results: Vec<Result<Replication>> = (0..cfg.reps as u64).map(|r| run_replication(cfg, r)).collect();
    summarize(cfg, &results)
}
