//! Run configuration shared by the subcommands.

use std::path::PathBuf;

use gravity_ppml_core::FeModel;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "GRAVITY_PPML_THREADS";
/// Jackknife partitions drawn for estimation on user data.
pub const DEFAULT_JK_REPS: usize = 200;

/// `y ~ x1 + x2`: the outcome column and the regressor columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formula {
    pub response: String,
    pub regressors: Vec<String>,
}

impl Formula {
    pub fn parse(s: &str) -> CliResult<Self> {
        let bad = || CliError::Config(format!("malformed formula {s:?}, expected \"y ~ x1 + x2\""));
        let (lhs, rhs) = s.split_once('~').ok_or_else(bad)?;
        let response = lhs.trim();
        if response.is_empty() {
            return Err(bad());
        }
        let regressors: Vec<String> = rhs.split('+').map(|t| t.trim().to_string()).collect();
        if regressors.iter().any(|r| r.is_empty()) {
            return Err(bad());
        }
        for (a, r) in regressors.iter().enumerate() {
            if r == response || regressors[..a].contains(r) {
                return Err(CliError::Config(format!("column {r:?} appears twice in the formula")));
            }
        }
        Ok(Formula { response: response.to_string(), regressors })
    }
}

impl std::fmt::Display for Formula {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ~ {}", self.response, self.regressors.join(" + "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeSpec {
    ThreeWay,
    TwoWay,
}

impl FeSpec {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "three-way" | "threeway" | "3" => Ok(FeSpec::ThreeWay),
            "two-way" | "twoway" | "2" => Ok(FeSpec::TwoWay),
            _ => Err(CliError::Config(format!("unknown fixed-effects specification {s:?}"))),
        }
    }

    pub fn model(self) -> FeModel {
        match self {
            FeSpec::ThreeWay => FeModel::ThreeWay,
            FeSpec::TwoWay => FeModel::TwoWay,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeSpec::ThreeWay => "three-way",
            FeSpec::TwoWay => "two-way",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corrections {
    pub analytical: bool,
    pub jackknife: bool,
    pub se: bool,
}

impl Corrections {
    pub fn all() -> Self {
        Corrections { analytical: true, jackknife: true, se: true }
    }

    /// Comma-separated subset of `analytical,jackknife,se`; `none` or an
    /// empty string selects nothing.
    pub fn parse(s: &str) -> CliResult<Self> {
        let mut c = Corrections::default();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.to_ascii_lowercase().as_str() {
                "analytical" => c.analytical = true,
                "jackknife" => c.jackknife = true,
                "se" => c.se = true,
                "none" => {}
                _ => return Err(CliError::Config(format!("unknown correction {tok:?}"))),
            }
        }
        Ok(c)
    }

    pub fn parse_list(items: &[String]) -> CliResult<Self> {
        Self::parse(&items.join(","))
    }

    /// Point-estimate corrections exist only for the three-way model.
    pub fn check(self, fe: FeSpec) -> CliResult<()> {
        if fe == FeSpec::TwoWay && (self.analytical || self.jackknife) {
            return Err(CliError::Config(
                "analytical and jackknife corrections require --fe three-way; two-way supports the se correction only"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Estimate,
    Simulate,
    Figures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub formula: Option<Formula>,
    pub fe: FeSpec,
    pub corrections: Corrections,
    pub jk_reps: usize,
    pub seed: u64,
    pub threads: usize,
    pub grid: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.corrections.check(self.fe)?;
        if self.corrections.jackknife && self.jk_reps == 0 {
            return Err(CliError::Config("--jk-reps must be positive".into()));
        }
        if self.threads == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        Ok(())
    }
}

/// Resolves the worker count: flag, then environment, then one per core.
pub fn resolve_threads(flag: Option<usize>) -> CliResult<usize> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_parsing() {
        let f = Formula::parse(" trade ~ fta + rta ").unwrap();
        assert_eq!(f.response, "trade");
        assert_eq!(f.regressors, vec!["fta", "rta"]);
        assert_eq!(f.to_string(), "trade ~ fta + rta");
        assert!(Formula::parse("trade fta").is_err());
        assert!(Formula::parse("~ fta").is_err());
        assert!(Formula::parse("y ~ x +").is_err());
        assert!(Formula::parse("y ~ x + x").is_err());
    }

    #[test]
    fn corrections_parsing() {
        assert_eq!(Corrections::parse("analytical,jackknife,se").unwrap(), Corrections::all());
        assert_eq!(Corrections::parse("none").unwrap(), Corrections::default());
        assert!(Corrections::parse("bootstrap").is_err());
    }

    #[test]
    fn two_way_rejects_point_corrections() {
        let c = Corrections::parse("analytical").unwrap();
        assert!(c.check(FeSpec::TwoWay).is_err());
        assert!(Corrections::parse("se").unwrap().check(FeSpec::TwoWay).is_ok());
        assert!(c.check(FeSpec::ThreeWay).is_ok());
    }
}
