//! Dense linear-algebra helpers shared by the estimators.
//!
//! Least squares goes through a Householder QR of the design, never through
//! the normal equations. A design is rejected as singular when the condition
//! number of `XᵀX` exceeds [`MAX_CONDITION`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Largest accepted condition number of `XᵀX`.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular or too ill-conditioned (condition number {condition:e})")]
    Singular { condition: f64 },
    #[error("system has {rows} rows and {cols} columns; need more rows than columns")]
    Underdetermined { rows: usize, cols: usize },
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// QR-based least-squares fit of `y` on `x`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub beta: DVector<f64>,
    pub fitted: DVector<f64>,
    pub rss: f64,
    /// Condition number of `XᵀX`.
    pub condition: f64,
    r_inv: DMatrix<f64>,
}

impl LeastSquares {
    /// Fits `y ≈ Xβ`. Requires `rows > cols` and a well-conditioned design.
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self, LinalgError> {
        let (n, k) = x.shape();
        if y.len() != n {
            return Err(LinalgError::Dimension(format!(
                "design has {n} rows but response has {} entries",
                y.len()
            )));
        }
        if n <= k || k == 0 {
            return Err(LinalgError::Underdetermined { rows: n, cols: k });
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let condition = gram_condition(&r);
        if !(condition <= MAX_CONDITION) {
            return Err(LinalgError::Singular { condition });
        }
        let q = qr.q();
        let qty = q.transpose() * y;
        let beta = r
            .solve_upper_triangular(&qty)
            .ok_or(LinalgError::Singular { condition })?;
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or(LinalgError::Singular { condition })?;
        let fitted = x * &beta;
        let rss = (y - &fitted).norm_squared();
        Ok(Self {
            beta,
            fitted,
            rss,
            condition,
            r_inv,
        })
    }

    /// `(XᵀX)⁻¹ = R⁻¹R⁻ᵀ`.
    pub fn xtx_inverse(&self) -> DMatrix<f64> {
        &self.r_inv * self.r_inv.transpose()
    }
}

/// Condition number of `RᵀR` from the singular values of `R`.
fn gram_condition(r: &DMatrix<f64>) -> f64 {
    let sv = r.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() || !max.is_finite() {
        return f64::INFINITY;
    }
    (max / min).powi(2)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::Dimension("matrix is not square".into()));
    }
    let chol = m.clone().cholesky().ok_or(LinalgError::NotPositiveDefinite)?;
    let inv = chol.inverse();
    Ok(symmetrize(&inv))
}

/// `(A + Aᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Rank from singular values with the usual `max(n, k)·ε·σ_max` tolerance.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * max;
    sv.iter().filter(|&&s| s > tol).count()
}

/// In-place Cholesky factorisation of a small row-major `m×m` matrix.
///
/// On success the lower triangle holds `L` with `A = LLᵀ`; the strict upper
/// triangle is left untouched. Returns `false` if a pivot is not positive.
pub fn cholesky_in_place(a: &mut [f64], m: usize) -> bool {
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in (j + 1)..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
    }
    true
}

/// Solves `Lx = b` in place for the lower factor produced by [`cholesky_in_place`].
pub fn forward_substitute(l: &[f64], m: usize, b: &mut [f64]) {
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * m + k] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
}

/// Solves `Lᵀx = b` in place.
pub fn backward_substitute_transposed(l: &[f64], m: usize, b: &mut [f64]) {
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in (i + 1)..m {
            s -= l[k * m + i] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
}
