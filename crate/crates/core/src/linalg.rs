//! Small dense linear-algebra helpers on top of `nalgebra`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue threshold below which a direction counts as null.
pub const PINV_RTOL: f64 = 1e-12;

/// Moore-Penrose pseudoinverse of a symmetric matrix together with its
/// numerical rank. Eigenvalues below `rtol * max|eig|` are treated as zero.
pub fn pinv_sym(a: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, usize) {
    let n = a.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = rtol * max;
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if max > 0.0 && ev.abs() > cut {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / ev;
        }
    }
    (out, rank)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
    ev
}

/// Ratio of the largest to the smallest absolute eigenvalue of a symmetric
/// matrix (infinite when singular).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(a);
    let max = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite matrix, or `None` when the
/// Cholesky factorization fails or the matrix is numerically singular.
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let sym = (a + a.transpose()) * 0.5;
    let chol = sym.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut dmax = 0.0f64;
    let mut dmin = f64::INFINITY;
    for k in 0..n {
        let d = l[(k, k)] * l[(k, k)];
        dmax = dmax.max(d);
        dmin = dmin.min(d);
    }
    if !(dmin > 1e-13 * dmax) {
        return None;
    }
    Some(chol.inverse())
}

/// A generalized inverse of the symmetric positive semidefinite matrix `a`
/// whose null space is spanned by the columns of `null`.
///
/// With `range(null) = null(a)`, `a + null null'` is positive definite and
/// its inverse is a generalized inverse of `a`. When the supplied basis does
/// not span the whole null space the factorization fails and the function
/// falls back to the eigen-decomposition pseudoinverse. Returns the inverse,
/// the rank of `a` and whether the fallback was used.
pub fn ginv_with_null(a: &DMatrix<f64>, null: &DMatrix<f64>) -> (DMatrix<f64>, usize, bool) {
    let n = a.nrows();
    if null.ncols() > 0 {
        let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut nn = null.clone();
        // column scaling keeps the added block on the same order as `a`
        for mut c in nn.column_iter_mut() {
            let norm = c.norm();
            if norm > 0.0 {
                c *= libm::sqrt(scale) / norm;
            }
        }
        let b = a + &nn * nn.transpose();
        if let Some(inv) = inverse_spd(&b) {
            let rank = n - null_rank(&nn);
            return (inv, rank, false);
        }
    }
    let (p, r) = pinv_sym(a, PINV_RTOL);
    (p, r, true)
}

fn null_rank(n: &DMatrix<f64>) -> usize {
    if n.ncols() == 0 {
        return 0;
    }
    let g = n.transpose() * n;
    let (_, r) = pinv_sym(&g, 1e-10);
    r
}

/// Solves the square system `a x = b`, returning `None` when `a` is singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.clone().lu();
    let x = lu.solve(b)?;
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Reciprocal condition estimate `min|u_kk| / max|u_kk|` from an LU
/// factorization with partial pivoting.
pub fn lu_rcond(a: &DMatrix<f64>) -> f64 {
    let lu = a.clone().lu();
    let u = lu.u();
    let mut max = 0.0f64;
    let mut min = f64::INFINITY;
    for k in 0..u.nrows() {
        let d = u[(k, k)].abs();
        max = max.max(d);
        min = min.min(d);
    }
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}
