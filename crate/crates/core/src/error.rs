use alloc::boxed::Box;
use alloc::string::String;

use crate::estimator::FitResult;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no records supplied")]
    EmptyRecords,
    #[error("record {row}: expected {expected} regressors, found {found}")]
    InconsistentRegressors { row: usize, expected: usize, found: usize },
    #[error("duplicate cell (exporter {exporter}, importer {importer}, period {period})")]
    DuplicateCell { exporter: String, importer: String, period: String },
    #[error("negative outcome {value} at (exporter {exporter}, importer {importer}, period {period})")]
    NegativeOutcome { exporter: String, importer: String, period: String, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("estimation sample is empty after pruning")]
    EmptySample,
    #[error("model needs at least {required} periods, panel has {found}")]
    TooFewPeriods { required: usize, found: usize },
    #[error("pair ({i}, {j}) has zero total outcome; prune the sample first")]
    DegeneratePair { i: usize, j: usize },
    #[error("zero outcome at pair ({i}, {j}), period {t}: gamma PML needs strictly positive outcomes")]
    GammaZeroOutcome { i: usize, j: usize, t: usize },
    #[error("regressor {index} is collinear with the fixed effects or other regressors")]
    CollinearRegressors { index: usize },
    #[error("estimator did not converge after {} iterations", .0.iterations)]
    NotConverged(Box<FitResult>),
    #[error("fitted means are non-finite or non-positive")]
    BadFit,
    #[error("variance bread matrix is singular")]
    SingularW,
    #[error("{role} block {index} has pseudoinverse rank {rank}, expected {expected}")]
    RankDeficientFeBlock { role: &'static str, index: usize, rank: usize, expected: usize },
    #[error("fixed-effect projection did not converge (relative residual {residual:e})")]
    ProjectionNotConverged { residual: f64 },
    #[error("partition leaves a degenerate subpanel: {0}")]
    PartitionDegenerate(String),
    #[error("jackknife failed after {attempts} partition draws")]
    JackknifeFailed { attempts: usize },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("{failed} of {total} replications failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("analytical bias correction is not available for the two-way model")]
    TwoWayBiasUnsupported,
}
