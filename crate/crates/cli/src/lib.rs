//! File formats, reports and command implementations for the
//! `gravity-ppml` command-line tool.

pub mod config;
pub mod error;
pub mod estimate;
pub mod figures;
pub mod grid;
pub mod io;
pub mod report;
pub mod simulate;

pub use config::{Command, Corrections, FeSpec, Formula, RunConfig};
pub use error::{CliError, CliResult};
pub use estimate::{cmd_estimate, estimate_panel, EstimateSpec};
pub use figures::cmd_figures;
pub use report::EstimateReport;
pub use simulate::cmd_simulate;

/// Dispatches a validated configuration to its command.
pub fn run(cfg: &RunConfig) -> CliResult<Vec<std::path::PathBuf>> {
    match cfg.command {
        Command::Estimate => cmd_estimate(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Figures => cmd_figures(cfg),
    }
}
