//! `simulate`: Monte Carlo grids with one summary row per estimator.

use std::path::PathBuf;

use gravity_ppml_core::simulation::montecarlo::MIN_REPS;
use gravity_ppml_core::simulation::{run_replication, summarize, McConfig, McSummary, Replication};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{with_pool, RunConfig};
use crate::error::{CliError, CliResult};
use crate::grid::{family_name, CellKind, CellSpec, Grid};
use crate::io::{read_to_string, write_file};

/// Runs the replications of one configuration in parallel. The result does
/// not depend on the number of worker threads.
pub fn replicate(cfg: &McConfig) -> Vec<gravity_ppml_core::Result<Replication>> {
    (0..cfg.reps as u64).into_par_iter().map(|r| run_replication(cfg, r)).collect()
}

/// Parallel counterpart of the sequential Monte Carlo driver.
pub fn run_monte_carlo(cfg: &McConfig) -> gravity_ppml_core::Result<McSummary> {
    cfg.validate()?;
    summarize(cfg, &replicate(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: usize,
    pub spec: CellSpec,
    pub status: String,
    pub summary: Option<McSummary>,
    pub error: Option<String>,
}

impl CellOutcome {
    pub fn ok(&self) -> bool {
        self.summary.is_some()
    }
}

#[derive(Debug, Clone, Serialize)]
struct CsvRow<'a> {
    cell: usize,
    dgp: String,
    n: usize,
    t: usize,
    reps: usize,
    family: String,
    status: &'a str,
    failures: Option<usize>,
    estimator: Option<&'a str>,
    se_type: Option<&'a str>,
    used: Option<usize>,
    mean: Option<f64>,
    sd: Option<f64>,
    avg_bias_x100: Option<f64>,
    mcse_avg_bias_x100: Option<f64>,
    bias_over_se: Option<f64>,
    mcse_bias_over_se: Option<f64>,
    se_over_sd: Option<f64>,
    mcse_se_over_sd: Option<f64>,
    coverage: Option<f64>,
    mcse_coverage: Option<f64>,
    error: Option<&'a str>,
}

pub fn run_cell(cell: usize, spec: &CellSpec, grid_seed: u64) -> CellOutcome {
    let result = match spec.kind {
        CellKind::ThreeWay => spec
            .mc_config(grid_seed)
            .and_then(|cfg| run_monte_carlo(&cfg).map_err(CliError::from)),
        CellKind::Overlap => Err(CliError::Config("overlap cells are only available in figures".into())),
    };
    match result {
        Ok(s) => CellOutcome { cell, spec: spec.clone(), status: "ok".into(), summary: Some(s), error: None },
        Err(e) => CellOutcome {
            cell,
            spec: spec.clone(),
            status: "failed".into(),
            summary: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every cell; a failing cell is recorded and the rest continue.
pub fn run_grid(grid: &Grid, default_seed: u64) -> Vec<CellOutcome> {
    let seed = grid.seed.unwrap_or(default_seed);
    grid.cells.iter().enumerate().map(|(c, spec)| run_cell(c, spec, seed)).collect()
}

pub fn outcomes_csv(outcomes: &[CellOutcome]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for o in outcomes {
        let s = &o.spec;
        let fam = s.family().map(family_name).unwrap_or_default();
        let base = CsvRow {
            cell: o.cell,
            dgp: s.label(),
            n: s.n,
            t: s.t,
            reps: s.reps,
            family: fam,
            status: &o.status,
            failures: None,
            estimator: None,
            se_type: None,
            used: None,
            mean: None,
            sd: None,
            avg_bias_x100: None,
            mcse_avg_bias_x100: None,
            bias_over_se: None,
            mcse_bias_over_se: None,
            se_over_sd: None,
            mcse_se_over_sd: None,
            coverage: None,
            mcse_coverage: None,
            error: o.error.as_deref(),
        };
        match &o.summary {
            None => w.serialize(&base)?,
            Some(sum) => {
                for r in &sum.rows {
                    w.serialize(CsvRow {
                        failures: Some(sum.failures),
                        estimator: Some(&r.estimator),
                        se_type: Some(&r.se_type),
                        used: Some(r.n),
                        mean: Some(r.mean),
                        sd: Some(r.sd),
                        avg_bias_x100: Some(r.avg_bias_x100),
                        mcse_avg_bias_x100: Some(r.mcse_avg_bias_x100),
                        bias_over_se: Some(r.bias_over_se),
                        mcse_bias_over_se: Some(r.mcse_bias_over_se),
                        se_over_sd: Some(r.se_over_sd),
                        mcse_se_over_sd: Some(r.mcse_se_over_sd),
                        coverage: Some(r.coverage),
                        mcse_coverage: Some(r.mcse_coverage),
                        ..base.clone()
                    })?
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Data(e.to_string()))
}

/// Reads the grid, runs it and writes `simulate.csv` and `simulate.json`.
pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    if cfg.threads == 0 {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    let path = cfg.grid.as_ref().ok_or_else(|| CliError::Config("simulate needs --grid".into()))?;
    let grid = Grid::parse(&read_to_string(path)?)?;
    grid.check_reps(MIN_REPS)?;
    let outcomes = with_pool(cfg.threads, || run_grid(&grid, cfg.seed))?;
    let json = serde_json::to_string_pretty(&outcomes).map_err(|e| CliError::Data(e.to_string()))? + "\n";
    Ok(vec![
        write_file(&cfg.output, "simulate.csv", &outcomes_csv(&outcomes)?)?,
        write_file(&cfg.output, "simulate.json", &json)?,
    ])
}
