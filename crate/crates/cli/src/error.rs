//! Error type of the command-line layer and its exit codes.

use gravity_ppml_core::Error as CoreError;
use serde::Serialize;
use thiserror::Error;

/// Exit code for invalid flags, formulas or grid files.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for unreadable or malformed input data and failed writes.
pub const EXIT_DATA: i32 = 3;
/// Exit code for estimation failures.
pub const EXIT_ESTIMATION: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Estimation(String),
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    kind: &'a str,
    exit_code: i32,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Estimation(_) => EXIT_ESTIMATION,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Estimation(_) => "estimation",
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        let msg = self.to_string();
        let body = ErrorJson { error: &msg, kind: self.kind(), exit_code: self.exit_code() };
        serde_json::to_string(&body).unwrap_or_else(|_| format!("{{\"error\":{msg:?}}}"))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        use CoreError::*;
        let msg = e.to_string();
        match e {
            EmptyRecords
            | InconsistentRegressors { .. }
            | DuplicateCell { .. }
            | NegativeOutcome { .. }
            | NonFinite(_) => CliError::Data(msg),
            InvalidSpec(_) | TwoWayBiasUnsupported => CliError::Config(msg),
            _ => CliError::Estimation(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(CliError::from(CoreError::EmptyRecords).exit_code(), EXIT_DATA);
        assert_eq!(CliError::from(CoreError::InvalidSpec("x".into())).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::from(CoreError::BadFit).exit_code(), EXIT_ESTIMATION);
    }

    #[test]
    fn json_is_parseable() {
        let e = CliError::Config("unknown column \"z\"".into());
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["exit_code"], 2);
        assert_eq!(v["kind"], "config");
    }
}
