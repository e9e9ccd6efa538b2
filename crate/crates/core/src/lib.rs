//! Fixed-effects Poisson pseudo-maximum-likelihood estimation for gravity
//! panels with exporter-time, importer-time and pair fixed effects, together
//! with analytical and jackknife corrections for the incidental-parameter
//! bias and a bias-corrected cluster-robust variance estimator.
//!
//! The crate is `no_std` compatible (it needs `alloc`). File formats, the
//! command-line interface and parallel Monte Carlo drivers live in the
//! `gravity-ppml` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bias;
pub mod error;
pub mod estimator;
pub mod jackknife;
pub mod linalg;
pub mod panel;
pub mod simulation;

mod fe;
mod math;

pub use bias::{
    analytical_bias_correct, bias_objects, bias_reexpressed, compute_b_d, corrected_vcov,
    remark_t2_bias, within_transform, AnalyticalCorrection, BiasComponents, BiasObjects,
    CorrectedVcov, CorrectionReport,
};
pub use error::{Error, Result};
pub use estimator::{
    cluster_robust_vcov, fit, profile_eta, FeModel, Family, FitOptions, FitResult, WarmStart,
};
pub use jackknife::{jackknife_correct, subpanels, JackknifeResult, PartitionPlan};
pub use panel::{build_panel, prune_sample, theta, PairBlock, PanelData, PruneLog, Record};
