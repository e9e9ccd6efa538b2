mod common;

use common::{dense_corrected_vcov, dense_within, random_panel, PanelShape};
use gravity_ppml_core::bias::w_total;
use gravity_ppml_core::panel::{prune_sample, PanelData};
use gravity_ppml_core::{
    analytical_bias_correct, bias_objects, bias_reexpressed, cluster_robust_vcov, compute_b_d,
    corrected_vcov, fit, remark_t2_bias, BiasObjects, FeModel, FitOptions, FitResult,
};
use nalgebra::{DMatrix, DVector};

fn fitted(n: usize, t: usize, k: usize, seed: u64, missing: f64) -> (PanelData, FitResult, BiasObjects) {
    let raw = random_panel(&PanelShape { n, t, k, zero_share: 0.1, missing_share: missing }, seed);
    let (panel, _) = prune_sample(&raw, FeModel::ThreeWay).unwrap();
    let f = fit(&panel, &FitOptions::default()).unwrap();
    let obj = bias_objects(&panel, &f).unwrap();
    (panel, f, obj)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn shares_block(th: &[f64]) -> DMatrix<f64> {
    let t = th.len();
    DMatrix::from_fn(t, t, |a, b| if a == b { th[a] } else { 0.0 } - th[a] * th[b])
}

fn shares(pi: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = pi.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[test]
fn third_derivative_tensor_matches_finite_differences() {
    let (_, f, obj) = fitted(5, 4, 1, 11, 0.0);
    let t = obj.t;
    for p in 0..6 {
        let lam = &f.lambda[p * t..(p + 1) * t];
        let pi: Vec<f64> = lam.iter().map(|v| v.ln()).collect();
        let g = obj.g_bar(p);
        let n = obj.sum_lambda[p];
        let h = 1e-5;
        for r in 0..t {
            let mut up = pi.clone();
            let mut dn = pi.clone();
            up[r] += h;
            dn[r] -= h;
            let d = (shares_block(&shares(&up)) - shares_block(&shares(&dn))) / (2.0 * h) * (-n);
            for a in 0..t {
                for b in 0..t {
                    let v = g[(r * t + a) * t + b];
                    assert!((v - d[(a, b)]).abs() < 1e-6 * n, "p={p} ({r},{a},{b}): {v} vs {}", d[(a, b)]);
                }
            }
        }
        // centering-matrix form: -sum_u lambda_u M_tu M_su M_ru
        let th = &obj.theta[p * t..(p + 1) * t];
        for a in 0..t {
            for b in 0..t {
                for c in 0..t {
                    let m = |x: usize, u: usize| if x == u { 1.0 } else { 0.0 } - th[x];
                    let v: f64 = -(0..t).map(|u| lam[u] * m(a, u) * m(b, u) * m(c, u)).sum::<f64>();
                    assert!((v - g[(a * t + b) * t + c]).abs() < 1e-10 * n);
                }
            }
        }
    }
}

#[test]
fn score_and_hessian_identities() {
    for seed in 20..25 {
        let (_, f, obj) = fitted(6, 3, 2, seed, 0.1);
        let t = obj.t;
        let ones = DVector::from_element(t, 1.0);
        for p in 0..obj.n_pairs() {
            let scale = obj.sum_y[p].max(obj.sum_lambda[p]);
            let s = obj.s_pair(p);
            assert!(s.sum().abs() <= 1e-12 * scale);
            assert!((obj.h_bar(p) * &ones).amax() <= 1e-12 * scale);
            assert!((obj.h_hat(p) * &ones).amax() <= 1e-12 * scale);
            // at the optimum pair totals coincide, so the two Hessians agree
            assert!((obj.h_bar(p) - obj.h_hat(p)).amax() <= 1e-8 * scale);
            let sl: f64 = f.lambda[p * t..(p + 1) * t].iter().sum();
            assert!(close(sl, obj.sum_y[p], 1e-9));
        }
        assert!(obj.within_foc() < 1e-10, "within foc {}", obj.within_foc());
    }
}

#[test]
fn within_transform_matches_dense_normal_equations() {
    for seed in 30..34 {
        let (panel, f, obj) = fitted(5, 3, 2, seed, 0.1);
        let dense = dense_within(&panel, &f.lambda, FeModel::ThreeWay);
        let t = obj.t;
        for (r, col) in dense.iter().enumerate() {
            for p in 0..obj.n_pairs() {
                // dense residual drops the pair mean only up to a constant
                let lam = &f.lambda[p * t..(p + 1) * t];
                let sl: f64 = lam.iter().sum();
                let m: f64 = (0..t).map(|s| lam[s] * col[p * t + s]).sum::<f64>() / sl;
                for s in 0..t {
                    if panel.pairs[p].present[s] {
                        let a = obj.x_tilde[(p * t + s) * obj.k + r];
                        assert!((a - (col[p * t + s] - m)).abs() < 1e-8, "{a} vs {}", col[p * t + s] - m);
                    }
                }
            }
        }
    }
}

#[test]
fn tensor_and_centering_bias_formulas_agree() {
    let mut count = 0;
    for (n, t) in [(4, 2), (5, 3), (6, 4), (8, 3), (7, 2)] {
        for rep in 0..4 {
            let seed = 1000 + 10 * n as u64 + t as u64 * 100 + rep;
            let (_, _, obj) = fitted(n, t, 1 + (rep as usize % 2), seed, 0.0);
            let a = compute_b_d(&obj).unwrap();
            let b = bias_reexpressed(&obj).unwrap();
            for r in 0..obj.k {
                assert!(close(a.b[r], b.b[r], 1e-10), "B n={n} t={t}: {} vs {}", a.b[r], b.b[r]);
                assert!(close(a.d[r], b.d[r], 1e-10), "D n={n} t={t}: {} vs {}", a.d[r], b.d[r]);
            }
            count += 1;
        }
    }
    assert!(count >= 20);
}

#[test]
fn two_period_scalar_formulas_agree() {
    for seed in 0..10 {
        let (_, _, obj) = fitted(4 + (seed as usize % 4), 2, 1 + (seed as usize % 2), 2000 + seed, 0.0);
        let a = compute_b_d(&obj).unwrap();
        let b = remark_t2_bias(&obj).unwrap();
        for r in 0..obj.k {
            assert!(close(a.b[r], b.b[r], 1e-10), "{} vs {}", a.b[r], b.b[r]);
            assert!(close(a.d[r], b.d[r], 1e-10), "{} vs {}", a.d[r], b.d[r]);
        }
        assert_eq!(a.min_rank_exporter, 1);
    }
}

#[test]
fn square_panel_correction_has_textbook_scaling() {
    let (_, f, obj) = fitted(6, 3, 1, 77, 0.0);
    let c = analytical_bias_correct(&f, &obj).unwrap();
    let n = obj.n_pairs() as f64;
    let w = w_total(&obj) / n;
    let expect = (c.b_hat[0] + c.d_hat[0]) / w[(0, 0)] / 5.0;
    assert!(close(c.correction[0], expect, 1e-12));
    assert!(close(c.beta_corrected[0], f.beta[0] - expect, 1e-12));
}

#[test]
fn corrected_variance_matches_dense_leverage() {
    for (seed, missing) in [(40, 0.0), (41, 0.0), (42, 0.15), (43, 0.0)] {
        let (panel, f, obj) = fitted(5, 3, 2, seed, missing);
        let cv = corrected_vcov(&obj).unwrap();
        let (v, vu) = dense_corrected_vcov(&panel, &f.lambda, FeModel::ThreeWay);
        let k = obj.k;
        for a in 0..k {
            for b in 0..k {
                assert!((cv.v[a * k + b] - v[(a, b)]).abs() <= 1e-8 * v.amax(), "{} vs {}", cv.v[a * k + b], v[(a, b)]);
                assert!((cv.v_uncorrected[a * k + b] - vu[(a, b)]).abs() <= 1e-8 * vu.amax());
            }
        }
        assert_eq!(cv.fallback_pairs, 0);
        let crv = cluster_robust_vcov(&panel, &f).unwrap();
        assert!((crv - DMatrix::from_row_slice(k, k, &cv.v_uncorrected)).amax() <= 1e-9 * vu.amax());
        // the leverage adjustment inflates the variance here
        assert!(cv.v[0] > cv.v_uncorrected[0]);
    }
}

#[test]
fn two_way_corrected_variance_matches_dense_leverage() {
    for seed in 50..53 {
        let raw = random_panel(&PanelShape { n: 5, t: 3, k: 1, zero_share: 0.0, missing_share: 0.0 }, seed);
        let f = fit(&raw, &FitOptions::two_way()).unwrap();
        let obj = bias_objects(&raw, &f).unwrap();
        assert!(compute_b_d(&obj).is_err());
        let cv = corrected_vcov(&obj).unwrap();
        let (v, _) = dense_corrected_vcov(&raw, &f.lambda, FeModel::TwoWay);
        assert!((cv.v[0] - v[(0, 0)]).abs() <= 1e-8 * v[(0, 0)]);
    }
}
