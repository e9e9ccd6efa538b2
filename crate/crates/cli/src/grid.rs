//! Grid files: a JSON list of simulation cells shared by `simulate` and
//! `figures`.
//!
//! ```json
//! { "seed": 7,
//!   "cells": [
//!     { "dgp": "II", "n": 50, "t": 5, "reps": 1000 },
//!     { "dgp": "IV", "n": 20, "t": 2, "reps": 500, "corrections": ["analytical"] },
//!     { "dgp": "I", "n": 50, "t": 5, "reps": 300, "family": "gamma", "corrections": [] },
//!     { "dgp": "CALIB", "n": 30, "t": 5, "reps": 100, "a": 200000, "b": 0.08 },
//!     { "kind": "overlap", "n": 20, "reps": 200 } ] }
//! ```

use gravity_ppml_core::simulation::{CalibratedDesign, DgpSpec, ErrorVariance, McConfig, OverlapSpec};
use gravity_ppml_core::simulation::synthetic_standin;
use gravity_ppml_core::{fit, prune_sample, FeModel, Family, FitOptions};
use serde::{Deserialize, Serialize};

use crate::config::Corrections;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    #[default]
    ThreeWay,
    Overlap,
}

/// Estimation family: `"poisson"`, `"gamma"` or the variance power as a
/// number (0 is Poisson, -1 is Gamma).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilySpec {
    Name(String),
    Power(f64),
}

impl FamilySpec {
    pub fn family(&self) -> CliResult<Family> {
        match self {
            FamilySpec::Name(s) => match s.to_ascii_lowercase().as_str() {
                "poisson" => Ok(Family::Poisson),
                "gamma" => Ok(Family::Gamma),
                _ => Err(CliError::Config(format!("unknown family {s:?}"))),
            },
            FamilySpec::Power(q) if *q == 0.0 => Ok(Family::Poisson),
            FamilySpec::Power(q) if *q == -1.0 => Ok(Family::Gamma),
            FamilySpec::Power(q) if q.is_finite() => Ok(Family::Power(*q)),
            FamilySpec::Power(q) => Err(CliError::Config(format!("invalid family power {q}"))),
        }
    }
}

pub fn family_name(f: Family) -> String {
    match f {
        Family::Poisson => "poisson".into(),
        Family::Gamma => "gamma".into(),
        Family::Power(q) => format!("power({q})"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    #[serde(default)]
    pub kind: CellKind,
    /// `I`, `II`, `III`, `IV` or `CALIB`; ignored by overlap cells.
    #[serde(default = "default_dgp")]
    pub dgp: String,
    pub n: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    pub reps: usize,
    #[serde(default)]
    pub corrections: Option<Vec<String>>,
    #[serde(default)]
    pub family: Option<FamilySpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub fe_variance: Option<f64>,
    #[serde(default)]
    pub nu_variance: Option<f64>,
    #[serde(default)]
    pub x_includes_pair_effect: Option<bool>,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub b: Option<f64>,
}

fn default_dgp() -> String {
    "II".into()
}

fn default_t() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default)]
    pub seed: Option<u64>,
    pub cells: Vec<CellSpec>,
}

impl Grid {
    pub fn parse(text: &str) -> CliResult<Self> {
        let g: Grid = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid grid file: {e}")))?;
        if g.cells.is_empty() {
            return Err(CliError::Config("grid has no cells".into()));
        }
        for (c, cell) in g.cells.iter().enumerate() {
            cell.corrections()
                .map_err(|e| CliError::Config(format!("cell {c}: {e}")))?;
            cell.family().map_err(|e| CliError::Config(format!("cell {c}: {e}")))?;
            if cell.kind == CellKind::ThreeWay && cell.dgp_name().is_none() {
                return Err(CliError::Config(format!("cell {c}: unknown dgp {:?}", cell.dgp)));
            }
        }
        Ok(g)
    }

    /// Rejects any cell with fewer than `min` replications.
    pub fn check_reps(&self, min: usize) -> CliResult<()> {
        for (c, cell) in self.cells.iter().enumerate() {
            if cell.reps < min {
                return Err(CliError::Config(format!(
                    "cell {c}: {} replications requested, at least {min} required",
                    cell.reps
                )));
            }
        }
        Ok(())
    }
}

impl CellSpec {
    pub fn corrections(&self) -> CliResult<Corrections> {
        match &self.corrections {
            Some(list) => Corrections::parse_list(list),
            None if self.family()? == Family::Poisson => Ok(Corrections::all()),
            None => Ok(Corrections::default()),
        }
    }

    pub fn family(&self) -> CliResult<Family> {
        self.family.as_ref().map_or(Ok(Family::Poisson), FamilySpec::family)
    }

    fn dgp_name(&self) -> Option<String> {
        let d = self.dgp.trim().to_ascii_uppercase();
        if d == "CALIB" || ErrorVariance::parse(&d).is_some() {
            Some(d)
        } else {
            None
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            CellKind::ThreeWay => self.dgp_name().unwrap_or_else(|| self.dgp.clone()),
            CellKind::Overlap => "overlap".into(),
        }
    }

    pub fn seed(&self, grid_seed: u64) -> u64 {
        self.seed.unwrap_or(grid_seed)
    }

    fn dgp_spec(&self, variance: ErrorVariance) -> DgpSpec {
        let mut s = DgpSpec::new(variance, self.n, self.t);
        if let Some(v) = self.beta {
            s.beta = v;
        }
        if let Some(v) = self.rho {
            s.rho = v;
        }
        if let Some(v) = self.fe_variance {
            s.fe_variance = v;
        }
        if let Some(v) = self.nu_variance {
            s.nu_variance = v;
        }
        if let Some(v) = self.x_includes_pair_effect {
            s.x_includes_pair_effect = v;
        }
        s
    }

    /// Monte Carlo configuration of a three-way cell. Calibrated cells fit
    /// the synthetic stand-in panel first.
    pub fn mc_config(&self, grid_seed: u64) -> CliResult<McConfig> {
        let seed = self.seed(grid_seed);
        let name = self.dgp_name().ok_or_else(|| CliError::Config(format!("unknown dgp {:?}", self.dgp)))?;
        let c = self.corrections()?;
        let base = if name == "CALIB" {
            let raw = synthetic_standin(self.n, self.t, seed)?;
            let (panel, _) = prune_sample(&raw, FeModel::ThreeWay)?;
            let f = fit(&panel, &FitOptions::default())?;
            let design = CalibratedDesign::from_fit(
                panel,
                &f,
                0,
                self.a.unwrap_or(CalibratedDesign::DEFAULT_A),
                self.b.unwrap_or(CalibratedDesign::DEFAULT_B),
                self.rho.unwrap_or(0.3),
            )?;
            let mut cfg = McConfig::new(DgpSpec::new(ErrorVariance::II, self.n, self.t), self.reps, seed);
            cfg.design = gravity_ppml_core::simulation::Design::Calibrated(design);
            cfg
        } else {
            let v = ErrorVariance::parse(&name).expect("checked dgp name");
            McConfig::new(self.dgp_spec(v), self.reps, seed)
        };
        Ok(McConfig {
            family: self.family()?,
            analytical: c.analytical,
            jackknife: c.jackknife,
            corrected_se: c.se,
            ..base
        })
    }

    pub fn overlap_spec(&self) -> OverlapSpec {
        let mut s = OverlapSpec::new(self.n);
        if let Some(v) = self.beta {
            s.beta = v;
        }
        if let Some(v) = self.rho {
            s.rho = v;
        }
        if let Some(v) = self.fe_variance {
            s.fe_variance = v;
        }
        if let Some(v) = self.nu_variance {
            s.nu_variance = v;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let g = Grid::parse(
            r#"{ "seed": 7, "cells": [
                { "dgp": "II", "n": 50, "t": 5, "reps": 1000 },
                { "dgp": "I", "n": 50, "t": 5, "reps": 300, "family": "gamma", "corrections": [] },
                { "dgp": "iv", "n": 20, "t": 2, "reps": 500, "family": -1.0, "corrections": [] },
                { "kind": "overlap", "n": 20, "reps": 200 } ] }"#,
        )
        .unwrap();
        assert_eq!(g.cells.len(), 4);
        assert_eq!(g.cells[0].corrections().unwrap(), Corrections::all());
        assert_eq!(g.cells[1].family().unwrap(), Family::Gamma);
        assert_eq!(g.cells[2].label(), "IV");
        assert_eq!(g.cells[3].kind, CellKind::Overlap);
        let cfg = g.cells[0].mc_config(7).unwrap();
        assert_eq!(cfg.reps, 1000);
        assert!(cfg.analytical && cfg.jackknife && cfg.corrected_se);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::parse(r#"{"cells": []}"#).is_err());
        assert!(Grid::parse(r#"{"cells": [{"dgp": "V", "n": 5, "reps": 60}]}"#).is_err());
        assert!(Grid::parse(r#"{"cells": [{"n": 5, "reps": 60, "corrections": ["boot"]}]}"#).is_err());
        assert!(Grid::parse(r#"{"cells": [{"n": 5, "reps": 60, "typo": 1}]}"#).is_err());
        let g = Grid::parse(r#"{"cells": [{"n": 5, "reps": 10}]}"#).unwrap();
        assert_eq!(g.check_reps(50).unwrap_err().exit_code(), 2);
    }
}
