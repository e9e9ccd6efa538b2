//! Simulation designs and Monte Carlo summaries.

pub mod calibrate;
pub mod dgp;
pub mod montecarlo;
pub mod overlap;
pub mod rng;

pub use calibrate::{calibrated_draw, synthetic_standin, CalibratedDesign};
pub use dgp::{generate, omega_covariance, DgpSpec, ErrorVariance, SimulatedPanel};
pub use montecarlo::{
    run_monte_carlo, run_replication, summarize, summarize_draws, Design, McConfig, McRow, McSummary,
    Replication,
};
pub use overlap::{fit_overlap, generate_overlap, OverlapPanel, OverlapSpec};
