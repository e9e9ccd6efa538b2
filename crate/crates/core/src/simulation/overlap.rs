//! Three-period panel with overlapping individual effects: the first effect
//! enters periods one and two, the second enters periods two and three.
//! PPML with these effects is inconsistent as the cross-section grows.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::dgp::{latent_ar1, omega, ErrorVariance};
use super::rng::{normal, stream, StreamKind};
use crate::error::{Error, Result};
use crate::math::{exp, sqrt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSpec {
    pub n: usize,
    pub beta: f64,
    pub rho: f64,
    pub fe_variance: f64,
    pub nu_variance: f64,
    pub variance: ErrorVariance,
}

impl OverlapSpec {
    pub fn new(n: usize) -> Self {
        OverlapSpec {
            n,
            beta: 1.0,
            rho: 0.3,
            fe_variance: 1.0 / 16.0,
            nu_variance: 0.5,
            variance: ErrorVariance::II,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapPanel {
    pub y: Vec<[f64; 3]>,
    pub x: Vec<[f64; 3]>,
}

pub fn generate_overlap(spec: &OverlapSpec, seed: u64, rep: u64) -> Result<OverlapPanel> {
    if spec.n < 2 {
        return Err(Error::InvalidSpec("need at least two individuals".into()));
    }
    let sd_fe = sqrt(spec.fe_variance);
    let sd_nu = sqrt(spec.nu_variance);
    let mut ys = Vec::with_capacity(spec.n);
    let mut xs = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let a = i as u64;
        let mut fe = stream(seed, rep, StreamKind::ExporterEffect, a, 0);
        let alpha = sd_fe * normal(&mut fe);
        let gamma = sd_fe * normal(&mut fe);
        let mut nu = stream(seed, rep, StreamKind::RegressorShock, a, 0);
        let z = latent_ar1(seed, rep, a, 0, 3, spec.rho);
        let mut x_prev = sd_nu * normal(&mut nu);
        let mut y = [0.0; 3];
        let mut x = [0.0; 3];
        for s in 0..3 {
            let f = if s <= 1 { alpha } else { 0.0 } + if s >= 1 { gamma } else { 0.0 };
            let xv = 0.5 * x_prev + f + sd_nu * normal(&mut nu);
            let l = exp(f + spec.beta * xv);
            y[s] = l * omega(spec.variance.sigma2(l, xv), z[s]);
            x[s] = xv;
            x_prev = xv;
        }
        ys.push(y);
        xs.push(x);
    }
    Ok(OverlapPanel { y: ys, x: xs })
}

/// Individual effects maximizing the Poisson likelihood given the slope:
/// the exact positive root of the two first-order conditions.
fn profile_effects(y: &[f64; 3], m: &[f64; 3]) -> (f64, f64) {
    let s12 = y[0] + y[1];
    let s23 = y[1] + y[2];
    // m2 m3 G^2 + (m2 s12 + m1 m3 - m2 s23) G - s23 m1 = 0
    let qa = m[1] * m[2];
    let qb = m[1] * s12 + m[0] * m[2] - m[1] * s23;
    let qc = -s23 * m[0];
    let disc = sqrt(qb * qb - 4.0 * qa * qc);
    // numerically stable positive root
    let g = if qb >= 0.0 { -2.0 * qc / (qb + disc) } else { (disc - qb) / (2.0 * qa) };
    let a = s12 / (m[0] + g * m[1]);
    (a, g)
}

/// PPML slope with the overlapping effects concentrated out, by Newton
/// iterations on the profiled score.
pub fn fit_overlap(data: &OverlapPanel) -> Result<f64> {
    for y in &data.y {
        if !(y[0] + y[1] > 0.0) || !(y[1] + y[2] > 0.0) {
            return Err(Error::DegeneratePair { i: 0, j: 0 });
        }
    }
    let mut beta = 0.0;
    for _ in 0..100 {
        let mut score = 0.0;
        let mut info = 0.0;
        for (y, x) in data.y.iter().zip(&data.x) {
            let m = [exp(beta * x[0]), exp(beta * x[1]), exp(beta * x[2])];
            let (a, g) = profile_effects(y, &m);
            let l = [a * m[0], a * g * m[1], g * m[2]];
            let mut hxx = 0.0;
            for s in 0..3 {
                score += x[s] * (y[s] - l[s]);
                hxx += x[s] * x[s] * l[s];
            }
            let h11 = l[0] + l[1];
            let h22 = l[1] + l[2];
            let h12 = l[1];
            let b1 = x[0] * l[0] + x[1] * l[1];
            let b2 = x[1] * l[1] + x[2] * l[2];
            let det = h11 * h22 - h12 * h12;
            let quad = (b1 * b1 * h22 - 2.0 * b1 * b2 * h12 + b2 * b2 * h11) / det;
            info += hxx - quad;
        }
        if !(info > 0.0) {
            return Err(Error::BadFit);
        }
        let step = score / info;
        beta += step;
        if !beta.is_finite() {
            return Err(Error::BadFit);
        }
        if step.abs() < 1e-12 * (1.0 + beta.abs()) {
            return Ok(beta);
        }
    }
    Err(Error::BadFit)
}
