//! Estimation reports: JSON for machines and a fixed-width table for people.

use serde::{Deserialize, Serialize};

/// Two-sided normal p-value of a z statistic.
pub fn p_value(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// `*` for p < 0.10, `**` for p < 0.05, `***` for p < 0.01.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

/// One estimate with its standard error and test of a zero coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub estimator: String,
    pub se_type: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub stars: String,
}

impl Inference {
    pub fn new(estimator: &str, se_type: &str, estimate: f64, se: f64) -> Self {
        let z = estimate / se;
        let p = p_value(z);
        Inference {
            estimator: estimator.into(),
            se_type: se_type.into(),
            estimate,
            se,
            z,
            p_value: p,
            stars: stars(p).into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub name: String,
    pub rows: Vec<Inference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub exporters: usize,
    pub importers: usize,
    pub periods: usize,
    pub pairs: usize,
    pub observations: usize,
    pub input_observations: usize,
    pub dropped_observations: usize,
    pub single_period_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    pub max_foc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticalReport {
    pub correction: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub d_hat: Vec<f64>,
    pub w_condition: f64,
    pub within_foc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JackknifeReport {
    pub partitions: usize,
    pub redraws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcovReport {
    pub v: Vec<f64>,
    pub v_uncorrected: Vec<f64>,
    pub fallback_pairs: usize,
    pub fe_rank: usize,
    pub fe_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub formula: String,
    pub fe: String,
    pub sample: SampleReport,
    pub fit: FitReport,
    pub coefficients: Vec<CoefficientReport>,
    pub analytical: Option<AnalyticalReport>,
    pub jackknife: Option<JackknifeReport>,
    pub corrected_vcov: Option<VcovReport>,
}

impl EstimateReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("PPML with {} fixed effects: {}\n", self.fe, self.formula));
        let s = &self.sample;
        out.push_str(&format!(
            "exporters {}  importers {}  periods {}  pairs {}  observations {} ({} dropped)\n",
            s.exporters, s.importers, s.periods, s.pairs, s.observations, s.dropped_observations
        ));
        out.push_str(&format!(
            "converged {}  iterations {}  deviance {:.6}\n\n",
            self.fit.converged, self.fit.iterations, self.fit.deviance
        ));
        out.push_str(&format!(
            "{:<14} {:<11} {:<12} {:>12} {:>12} {:>8} {:<3}\n",
            "regressor", "estimator", "se", "estimate", "std.err", "p", ""
        ));
        for c in &self.coefficients {
            for r in &c.rows {
                out.push_str(&format!(
                    "{:<14} {:<11} {:<12} {:>12.6} {:>12.6} {:>8.4} {:<3}\n",
                    c.name, r.estimator, r.se_type, r.estimate, r.se, r.p_value, r.stars
                ));
            }
        }
        out.push_str("\n* p<0.10, ** p<0.05, *** p<0.01\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.2), "");
        assert_eq!(stars(0.099), "*");
        assert_eq!(stars(0.049), "**");
        assert_eq!(stars(0.009), "***");
        assert_eq!(stars(0.10), "");
        assert_eq!(stars(0.05), "*");
        assert_eq!(stars(0.01), "**");
    }

    #[test]
    fn p_values_match_normal_quantiles() {
        assert!((p_value(1.959963984540054) - 0.05).abs() < 1e-12);
        assert!((p_value(-1.6448536269514722) - 0.10).abs() < 1e-12);
        assert!((p_value(2.5758293035489004) - 0.01).abs() < 1e-12);
        assert_eq!(p_value(0.0), 1.0);
    }

    #[test]
    fn inference_fields() {
        let r = Inference::new("FE-PPML", "uncorrected", 0.3, 0.1);
        assert!((r.z - 3.0).abs() < 1e-12);
        assert_eq!(r.stars, "***");
    }
}
