//! `estimate`: fit a user panel and apply the requested corrections.

use std::path::PathBuf;

use gravity_ppml_core::jackknife::{combine, jackknife_replicate};
use gravity_ppml_core::{
    analytical_bias_correct, bias_objects, cluster_robust_vcov, corrected_vcov, fit, prune_sample, FitOptions,
    PanelData, PartitionPlan,
};
use rayon::prelude::*;

use crate::config::{with_pool, Corrections, FeSpec, Formula, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{read_panel, write_file};
use crate::report::{
    AnalyticalReport, CoefficientReport, EstimateReport, FitReport, Inference, JackknifeReport, SampleReport,
    VcovReport,
};

/// Estimation settings independent of file locations.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSpec {
    pub formula: Formula,
    pub fe: FeSpec,
    pub corrections: Corrections,
    pub jk_reps: usize,
    pub seed: u64,
}

fn sqrt_diag(v: &[f64], k: usize) -> Vec<f64> {
    (0..k).map(|r| v[r * k + r].sqrt()).collect()
}

/// Runs the full pipeline on an in-memory panel. Must be called inside the
/// thread pool that should carry the jackknife replicates.
pub fn estimate_panel(raw: &PanelData, spec: &EstimateSpec) -> CliResult<EstimateReport> {
    spec.corrections.check(spec.fe)?;
    let model = spec.fe.model();
    let (panel, log) = prune_sample(raw, model)?;
    let opts = match spec.fe {
        FeSpec::ThreeWay => FitOptions::default(),
        FeSpec::TwoWay => FitOptions::two_way(),
    };
    let f = fit(&panel, &opts)?;
    let k = panel.k();
    let v = cluster_robust_vcov(&panel, &f)?;
    let se: Vec<f64> = (0..k).map(|r| v[(r, r)].sqrt()).collect();

    let c = spec.corrections;
    let obj = if c.analytical || c.se { Some(bias_objects(&panel, &f)?) } else { None };
    let analytical = match (&obj, c.analytical) {
        (Some(o), true) => Some((analytical_bias_correct(&f, o)?, o.within_foc())),
        _ => None,
    };
    let vcov = match (&obj, c.se) {
        (Some(o), true) => Some(corrected_vcov(o)?),
        _ => None,
    };
    let jackknife = if c.jackknife {
        let plan = PartitionPlan::random(spec.jk_reps, spec.seed);
        let reps = (0..plan.replicates)
            .into_par_iter()
            .map(|r| jackknife_replicate(&panel, &opts, &plan, r, &f.beta))
            .collect::<Result<Vec<_>, _>>()?;
        Some(combine(&f.beta, reps))
    } else {
        None
    };

    let se_corr = vcov.as_ref().map(|cv| sqrt_diag(&cv.v, k));
    let (alt_se, alt_type) = match &se_corr {
        Some(s) => (s.clone(), "corrected"),
        None => (se.clone(), "uncorrected"),
    };
    let coefficients = (0..k)
        .map(|r| {
            let mut rows = vec![Inference::new("FE-PPML", "uncorrected", f.beta[r], se[r])];
            if let Some(s) = &se_corr {
                rows.push(Inference::new("FE-PPML", "corrected", f.beta[r], s[r]));
            }
            if let Some((a, _)) = &analytical {
                rows.push(Inference::new("Analytical", alt_type, a.beta_corrected[r], alt_se[r]));
            }
            if let Some(j) = &jackknife {
                rows.push(Inference::new("Jackknife", alt_type, j.beta[r], alt_se[r]));
            }
            CoefficientReport { name: panel.regressor_names[r].clone(), rows }
        })
        .collect();

    Ok(EstimateReport {
        formula: spec.formula.to_string(),
        fe: spec.fe.name().into(),
        sample: SampleReport {
            exporters: panel.n_exporters(),
            importers: panel.n_importers(),
            periods: panel.n_periods(),
            pairs: panel.pairs.len(),
            observations: panel.n_obs(),
            input_observations: raw.n_obs(),
            dropped_observations: log.cells_dropped(),
            single_period_pairs: log.single_period_pairs.len(),
        },
        fit: FitReport { converged: f.converged, iterations: f.iterations, deviance: f.deviance, max_foc: f.max_foc },
        coefficients,
        analytical: analytical.map(|(a, foc)| AnalyticalReport {
            correction: a.correction,
            b_hat: a.b_hat,
            d_hat: a.d_hat,
            w_condition: a.w_condition,
            within_foc: foc,
        }),
        jackknife: jackknife.map(|j| JackknifeReport {
            partitions: j.replicate_betas.len(),
            redraws: j.redraws,
            seed: spec.seed,
        }),
        corrected_vcov: vcov.map(|cv| VcovReport {
            v: cv.v,
            v_uncorrected: cv.v_uncorrected,
            fallback_pairs: cv.fallback_pairs,
            fe_rank: cv.fe_rank,
            fe_dim: cv.fe_dim,
        }),
    })
}

/// Reads the input, estimates and writes `report.json` and `report.txt`.
pub fn cmd_estimate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let input = cfg.input.as_ref().ok_or_else(|| CliError::Config("estimate needs --input".into()))?;
    let formula = cfg.formula.clone().ok_or_else(|| CliError::Config("estimate needs --formula".into()))?;
    let raw = read_panel(input, &formula)?;
    let spec = EstimateSpec {
        formula,
        fe: cfg.fe,
        corrections: cfg.corrections,
        jk_reps: cfg.jk_reps,
        seed: cfg.seed,
    };
    let report = with_pool(cfg.threads, || estimate_panel(&raw, &spec))??;
    Ok(vec![
        write_file(&cfg.output, "report.json", &report.to_json())?,
        write_file(&cfg.output, "report.txt", &report.to_table())?,
    ])
}
