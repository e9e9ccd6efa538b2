//! `figures`: plot data as CSV. Raw estimate draws for density plots,
//! bias/SE and SE/SD curves against the panel length, and the
//! overlapping-effects example. Rendering is left to the plotting tool.

use std::path::PathBuf;

use gravity_ppml_core::simulation::montecarlo::MIN_REPS;
use gravity_ppml_core::simulation::{fit_overlap, generate_overlap, summarize, summarize_draws, McRow, Replication};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{with_pool, RunConfig};
use crate::error::{CliError, CliResult};
use crate::grid::{CellKind, CellSpec, Grid};
use crate::io::{read_to_string, write_file};
use crate::simulate::{outcomes_csv, replicate, CellOutcome};

/// Fewest replications per figure cell.
pub const MIN_FIGURE_REPS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Draw {
    pub cell: usize,
    pub kind: String,
    pub dgp: String,
    pub n: usize,
    pub t: usize,
    pub rep: u64,
    pub estimator: String,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapRow {
    pub cell: usize,
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    pub mean: f64,
    pub sd: f64,
    pub avg_bias_x100: f64,
    pub mcse_avg_bias_x100: f64,
}

#[derive(Debug, Default)]
pub struct FigureData {
    pub draws: Vec<Draw>,
    pub curves: Vec<CellOutcome>,
    pub overlap: Vec<OverlapRow>,
}

fn draw(cell: usize, spec: &CellSpec, rep: u64, estimator: &str, beta: f64) -> Draw {
    Draw {
        cell,
        kind: match spec.kind {
            CellKind::ThreeWay => "three-way".into(),
            CellKind::Overlap => "overlap".into(),
        },
        dgp: spec.label(),
        n: spec.n,
        t: if spec.kind == CellKind::Overlap { 3 } else { spec.t },
        rep,
        estimator: estimator.into(),
        beta,
    }
}

fn three_way(cell: usize, spec: &CellSpec, seed: u64, out: &mut FigureData) {
    let run = || -> CliResult<(gravity_ppml_core::simulation::McSummary, Vec<Replication>)> {
        let cfg = spec.mc_config(seed)?;
        // every check except the replication floor, which figures relax
        let mut probe = cfg.clone();
        probe.reps = probe.reps.max(MIN_REPS);
        probe.validate()?;
        let results = replicate(&cfg);
        let summary = summarize(&cfg, &results)?;
        Ok((summary, results.into_iter().filter_map(Result::ok).collect()))
    };
    match run() {
        Ok((summary, reps)) => {
            for r in &reps {
                out.draws.push(draw(cell, spec, r.rep, "FE-PPML", r.beta));
                if let Some(b) = r.beta_analytical {
                    out.draws.push(draw(cell, spec, r.rep, "Analytical", b));
                }
                if let Some(b) = r.beta_jackknife {
                    out.draws.push(draw(cell, spec, r.rep, "Jackknife", b));
                }
            }
            out.curves.push(CellOutcome {
                cell,
                spec: spec.clone(),
                status: "ok".into(),
                summary: Some(summary),
                error: None,
            });
        }
        Err(e) => out.curves.push(CellOutcome {
            cell,
            spec: spec.clone(),
            status: "failed".into(),
            summary: None,
            error: Some(e.to_string()),
        }),
    }
}

/// Overlapping-effects estimates of one cell, in replication order.
pub fn overlap_draws(spec: &CellSpec, seed: u64) -> Vec<(u64, CliResult<f64>)> {
    let os = spec.overlap_spec();
    (0..spec.reps as u64)
        .into_par_iter()
        .map(|r| {
            let b = generate_overlap(&os, seed, r).and_then(|d| fit_overlap(&d)).map_err(CliError::from);
            (r, b)
        })
        .collect()
}

fn overlap(cell: usize, spec: &CellSpec, seed: u64, out: &mut FigureData) -> CliResult<()> {
    let res = overlap_draws(spec, seed);
    let ok: Vec<(u64, f64)> = res.iter().filter_map(|(r, b)| b.as_ref().ok().map(|b| (*r, *b))).collect();
    if ok.len() < MIN_FIGURE_REPS {
        let msg = res.iter().find_map(|(_, b)| b.as_ref().err().map(|e| e.to_string()));
        return Err(CliError::Estimation(format!(
            "cell {cell}: overlap example produced {} estimates{}",
            ok.len(),
            msg.map(|m| format!(" ({m})")).unwrap_or_default()
        )));
    }
    for (r, b) in &ok {
        out.draws.push(draw(cell, spec, *r, "Overlap-PPML", *b));
    }
    let est: Vec<f64> = ok.iter().map(|(_, b)| *b).collect();
    let ones = vec![1.0; est.len()];
    let row: McRow = summarize_draws("Overlap-PPML", "none", spec.overlap_spec().beta, &est, &ones);
    out.overlap.push(OverlapRow {
        cell,
        n: spec.n,
        reps: spec.reps,
        failures: res.len() - ok.len(),
        mean: row.mean,
        sd: row.sd,
        avg_bias_x100: row.avg_bias_x100,
        mcse_avg_bias_x100: row.mcse_avg_bias_x100,
    });
    Ok(())
}

pub fn figure_data(grid: &Grid, default_seed: u64) -> CliResult<FigureData> {
    let seed = grid.seed.unwrap_or(default_seed);
    let mut out = FigureData::default();
    for (c, spec) in grid.cells.iter().enumerate() {
        match spec.kind {
            CellKind::ThreeWay => three_way(c, spec, spec.seed(seed), &mut out),
            CellKind::Overlap => overlap(c, spec, spec.seed(seed), &mut out)?,
        }
    }
    Ok(out)
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Data(e.to_string()))
}

/// Writes `draws.csv`, `curves.csv` and `overlap.csv`.
pub fn cmd_figures(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    if cfg.threads == 0 {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    let path = cfg
        .grid
        .as_ref()
        .or(cfg.input.as_ref())
        .ok_or_else(|| CliError::Config("figures needs --grid".into()))?;
    let grid = Grid::parse(&read_to_string(path)?)?;
    grid.check_reps(MIN_FIGURE_REPS)?;
    let data = with_pool(cfg.threads, || figure_data(&grid, cfg.seed))??;
    Ok(vec![
        write_file(
            &cfg.output,
            "draws.csv",
            &to_csv(&data.draws, &["cell", "kind", "dgp", "n", "t", "rep", "estimator", "beta"])?,
        )?,
        write_file(&cfg.output, "curves.csv", &outcomes_csv(&data.curves)?)?,
        write_file(
            &cfg.output,
            "overlap.csv",
            &to_csv(
                &data.overlap,
                &["cell", "n", "reps", "failures", "mean", "sd", "avg_bias_x100", "mcse_avg_bias_x100"],
            )?,
        )?,
    ])
}
