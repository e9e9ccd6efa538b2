use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gravity_ppml::config::{resolve_threads, DEFAULT_JK_REPS};
use gravity_ppml::{run, CliResult, Command, Corrections, FeSpec, Formula, RunConfig};

#[derive(Parser)]
#[command(name = "gravity-ppml", version, about = "Three-way fixed-effects PPML gravity estimation with bias corrections")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a panel from CSV and report corrected estimates
    Estimate(EstimateArgs),
    /// Run a Monte Carlo grid
    Simulate(GridArgs),
    /// Emit plot data for estimate densities and bias curves
    Figures(GridArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory
    #[arg(long, default_value = ".")]
    output: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads; falls back to GRAVITY_PPML_THREADS, then the core count
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV with exporter, importer, period, outcome and regressor columns
    #[arg(long)]
    input: PathBuf,
    /// Model formula, for example "trade ~ fta + rta"
    #[arg(long)]
    formula: String,
    /// three-way or two-way
    #[arg(long, default_value = "three-way")]
    fe: String,
    /// Comma-separated subset of analytical,jackknife,se, or none
    #[arg(long)]
    correct: Option<String>,
    /// Jackknife partitions
    #[arg(long, default_value_t = DEFAULT_JK_REPS)]
    jk_reps: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GridArgs {
    /// Grid file (JSON)
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Accepted as an alias of --grid
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn config(cli: Cli) -> CliResult<RunConfig> {
    match cli.command {
        Cmd::Estimate(a) => {
            let fe = FeSpec::parse(&a.fe)?;
            let corrections = match &a.correct {
                Some(s) => Corrections::parse(s)?,
                None if fe == FeSpec::ThreeWay => Corrections::all(),
                None => Corrections { se: true, ..Corrections::default() },
            };
            Ok(RunConfig {
                command: Command::Estimate,
                input: Some(a.input),
                output: a.common.output,
                formula: Some(Formula::parse(&a.formula)?),
                fe,
                corrections,
                jk_reps: a.jk_reps,
                seed: a.common.seed,
                threads: resolve_threads(a.common.threads)?,
                grid: None,
            })
        }
        Cmd::Simulate(a) => grid_config(Command::Simulate, a),
        Cmd::Figures(a) => grid_config(Command::Figures, a),
    }
}

fn grid_config(command: Command, a: GridArgs) -> CliResult<RunConfig> {
    Ok(RunConfig {
        command,
        input: None,
        output: a.common.output,
        formula: None,
        fe: FeSpec::ThreeWay,
        corrections: Corrections::all(),
        jk_reps: 1,
        seed: a.common.seed,
        threads: resolve_threads(a.common.threads)?,
        grid: a.grid.or(a.input),
    })
}

fn main() -> ExitCode {
    let result = config(Cli::parse()).and_then(|cfg| run(&cfg));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
