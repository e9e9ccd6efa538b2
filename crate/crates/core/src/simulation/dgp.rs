//! Data-generating processes for the Monte Carlo experiments.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::rng::{normal, stream, StreamKind};
use crate::error::{Error, Result};
use crate::math::{exp, ln_1p, pow, sqrt};
use crate::panel::{PairBlock, PanelData};

/// Conditional variance of the multiplicative error `omega`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ErrorVariance {
    /// `lambda^-2`
    I,
    /// `lambda^-1`
    II,
    /// constant one
    III,
    /// `0.5 lambda^-1 + 0.5 exp(2x)`
    IV,
    /// `a lambda^-1 + b * indicator`, with the indicator taken from the
    /// first regressor.
    Calibrated { a: f64, b: f64 },
}

impl ErrorVariance {
    pub fn sigma2(self, lambda: f64, x: f64) -> f64 {
        match self {
            ErrorVariance::I => 1.0 / (lambda * lambda),
            ErrorVariance::II => 1.0 / lambda,
            ErrorVariance::III => 1.0,
            ErrorVariance::IV => 0.5 / lambda + 0.5 * exp(2.0 * x),
            ErrorVariance::Calibrated { a, b } => a / lambda + b * x,
        }
    }

    pub fn name(self) -> String {
        match self {
            ErrorVariance::I => "I".into(),
            ErrorVariance::II => "II".into(),
            ErrorVariance::III => "III".into(),
            ErrorVariance::IV => "IV".into(),
            ErrorVariance::Calibrated { .. } => "CALIB".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Some(ErrorVariance::I),
            "II" | "2" => Some(ErrorVariance::II),
            "III" | "3" => Some(ErrorVariance::III),
            "IV" | "4" => Some(ErrorVariance::IV),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub variance: ErrorVariance,
    pub n: usize,
    pub t: usize,
    pub beta: f64,
    /// Autocorrelation of the latent normal behind `omega`.
    pub rho: f64,
    /// Variance of the exporter-time, importer-time and pair effects.
    pub fe_variance: f64,
    /// Variance of the regressor innovations.
    pub nu_variance: f64,
    /// Whether the pair effect enters the regressor process.
    pub x_includes_pair_effect: bool,
}

impl DgpSpec {
    pub fn new(variance: ErrorVariance, n: usize, t: usize) -> Self {
        DgpSpec {
            variance,
            n,
            t,
            beta: 1.0,
            rho: 0.3,
            fe_variance: 1.0 / 16.0,
            nu_variance: 0.5,
            x_includes_pair_effect: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidSpec(format!("need at least 3 countries, got {}", self.n)));
        }
        if self.t < 2 {
            return Err(Error::InvalidSpec(format!("need at least 2 periods, got {}", self.t)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidSpec("autocorrelation must lie in (-1, 1)".into()));
        }
        if !(self.fe_variance >= 0.0) || !(self.nu_variance >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidSpec("variances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Covariance of two log-normal errors whose latent normals have
/// correlation `rho^lag`.
pub fn omega_covariance(sigma2_s: f64, sigma2_t: f64, rho: f64, lag: u32) -> f64 {
    let ss = sqrt(ln_1p(sigma2_s));
    let st = sqrt(ln_1p(sigma2_t));
    exp(pow(rho, lag as f64) * ss * st) - 1.0
}

/// Mean-one log-normal error with the given variance and latent normal.
#[inline]
pub fn omega(sigma2: f64, z: f64) -> f64 {
    let l = ln_1p(sigma2);
    exp(-0.5 * l + sqrt(l) * z)
}

/// Stationary AR(1) standard normals for one pair.
pub fn latent_ar1(seed: u64, rep: u64, a: u64, b: u64, t: usize, rho: f64) -> Vec<f64> {
    let mut rng = stream(seed, rep, StreamKind::OutcomeShock, a, b);
    let mut z = normal(&mut rng);
    let c = sqrt(1.0 - rho * rho);
    (0..t)
        .map(|_| {
            z = rho * z + c * normal(&mut rng);
            z
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub panel: PanelData,
    /// True conditional means per cell in pair-major order.
    pub lambda: Vec<f64>,
}

/// Draws one square panel without the diagonal (pairs `i != j`).
pub fn generate(spec: &DgpSpec, seed: u64, rep: u64) -> Result<SimulatedPanel> {
    spec.validate()?;
    let (n, t) = (spec.n, spec.t);
    let sd_fe = sqrt(spec.fe_variance);
    let sd_nu = sqrt(spec.nu_variance);
    let draw_effects = |kind: StreamKind| -> Vec<f64> {
        let mut out = vec![0.0; n * t];
        for i in 0..n {
            let mut rng = stream(seed, rep, kind, i as u64, 0);
            for s in 0..t {
                out[i * t + s] = sd_fe * normal(&mut rng);
            }
        }
        out
    };
    let alpha = draw_effects(StreamKind::ExporterEffect);
    let gamma = draw_effects(StreamKind::ImporterEffect);
    let mut pairs = Vec::with_capacity(n * (n - 1));
    let mut lambda = Vec::with_capacity(n * (n - 1) * t);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (i as u64, j as u64);
            let eta = sd_fe * normal(&mut stream(seed, rep, StreamKind::PairEffect, a, b));
            let mut nu = stream(seed, rep, StreamKind::RegressorShock, a, b);
            let eta_x = if spec.x_includes_pair_effect { eta } else { 0.0 };
            let mut x_prev = eta_x + sd_nu * normal(&mut nu);
            let z = latent_ar1(seed, rep, a, b, t, spec.rho);
            let mut y = vec![0.0; t];
            let mut x = vec![0.0; t];
            for s in 0..t {
                let fe = alpha[i * t + s] + gamma[j * t + s];
                let xs = 0.5 * x_prev + fe + eta_x + sd_nu * normal(&mut nu);
                let l = exp(fe + eta + spec.beta * xs);
                let w = omega(spec.variance.sigma2(l, xs), z[s]);
                y[s] = l * w;
                x[s] = xs;
                lambda.push(l);
                x_prev = xs;
            }
            pairs.push(PairBlock { i, j, y, x, present: vec![true; t] });
        }
    }
    let labels = |m: usize| -> Vec<String> { (1..=m).map(|v| v.to_string()).collect() };
    Ok(SimulatedPanel {
        panel: PanelData {
            exporters: labels(n),
            importers: labels(n),
            periods: labels(t),
            regressor_names: vec!["x".into()],
            pairs,
        },
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_covariance_reference_value() {
        let v = omega_covariance(1.0, 1.0, 0.3, 1);
        let expect = libm::exp(0.3 * libm::log(2.0)) - 1.0;
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.231144).abs() < 1e-5);
        assert!((omega_covariance(0.7, 0.7, 0.3, 0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn omega_moments_match_design() {
        // mean one, variance sigma2, lag-one covariance from the closed form
        let (n, sigma2, rho) = (200_000u64, 0.8, 0.3);
        let (mut m, mut v, mut c) = (0.0, 0.0, 0.0);
        for p in 0..n {
            let z = latent_ar1(5, 0, p, 0, 2, rho);
            let (a, b) = (omega(sigma2, z[0]), omega(sigma2, z[1]));
            m += a;
            v += (a - 1.0) * (a - 1.0);
            c += (a - 1.0) * (b - 1.0);
        }
        let nf = n as f64;
        assert!((m / nf - 1.0).abs() < 0.01);
        assert!((v / nf - sigma2).abs() < 0.05);
        assert!((c / nf - omega_covariance(sigma2, sigma2, rho, 1)).abs() < 0.02);
    }

    #[test]
    fn generated_panel_shape() {
        let spec = DgpSpec::new(ErrorVariance::II, 5, 3);
        let sim = generate(&spec, 1, 0).unwrap();
        assert_eq!(sim.panel.pairs.len(), 20);
        assert_eq!(sim.lambda.len(), 60);
        assert!(sim.panel.pairs.iter().all(|p| p.y.iter().all(|v| *v > 0.0)));
        assert_eq!(sim.panel, generate(&spec, 1, 0).unwrap().panel);
        assert_ne!(sim.panel, generate(&spec, 1, 1).unwrap().panel);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(DgpSpec::new(ErrorVariance::I, 2, 3).validate().is_err());
        assert!(DgpSpec::new(ErrorVariance::I, 4, 1).validate().is_err());
    }
}
