//! First-difference response vectors and block lower-triangular designs.
//!
//! For `n` subjects and `T` time points the differenced response stacks the
//! `T−1` consecutive changes period by period:
//! `[ΔY₁₁ … ΔY_n1, ΔY₁₂ … ΔY_n2, …, ΔY_n(T−1)]`.
//!
//! Each feature contributes a block of `T(T−1)/2` columns. Row block `k`
//! (the `k`-th change of the response) regresses on the first `k` changes of
//! the feature, each with its own coefficient, so the block is lower
//! triangular:
//!
//! ```text
//! k=1: [ΔX·1   0      0      0      0      0    ]
//! k=2: [ 0    ΔX·1   ΔX·2    0      0      0    ]
//! k=3: [ 0     0      0     ΔX·1   ΔX·2   ΔX·3  ]
//! ```
//!
//! The differencing matrix `D` is only materialised by
//! [`gls_equivalence_check`]; design construction works by index arithmetic.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::numerical_rank;
use crate::longdata::LongitudinalDataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("need at least 2 time points, got {0}")]
    TooFewTimePoints(usize),
    #[error("feature index {feature} out of range for {n_features} features")]
    FeatureOutOfRange { feature: usize, n_features: usize },
    #[error("covariance matrix is not symmetric positive definite")]
    SingularCovariance,
    #[error("[1 : X] does not have full column rank")]
    RankDeficientDesign,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Number of design columns per feature, `T(T−1)/2`.
pub fn block_width(n_times: usize) -> usize {
    n_times * n_times.saturating_sub(1) / 2
}

/// Differenced response with its design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferencedDesign {
    /// Length `n(T−1)`.
    pub y: DVector<f64>,
    /// `n(T−1) × Σ block_sizes`.
    pub x: DMatrix<f64>,
    /// Column count of each feature block.
    pub block_sizes: Vec<usize>,
    /// Dataset feature index of each block, in column order.
    pub feature_index: Vec<usize>,
    pub n_subjects: usize,
    pub n_times: usize,
}

impl DifferencedDesign {
    pub fn n_groups(&self) -> usize {
        self.block_sizes.len()
    }

    /// Column offset of each block.
    pub fn block_offsets(&self) -> Vec<usize> {
        self.block_sizes
            .iter()
            .scan(0, |acc, &w| {
                let start = *acc;
                *acc += w;
                Some(start)
            })
            .collect()
    }
}

/// `n × (T−1)` matrix of consecutive changes of an `n × T` trajectory matrix.
pub fn difference_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = m.shape();
    DMatrix::from_fn(n, t.saturating_sub(1), |i, s| m[(i, s + 1)] - m[(i, s)])
}

/// Differenced response, ordered period-major.
pub fn difference_response(dataset: &LongitudinalDataset) -> Result<DVector<f64>, DesignError> {
    let t = dataset.n_times();
    if t < 2 {
        return Err(DesignError::TooFewTimePoints(t));
    }
    Ok(stack_periods(&difference_rows(dataset.responses())))
}

fn stack_periods(d: &DMatrix<f64>) -> DVector<f64> {
    // column-major storage of the n × (T−1) matrix is exactly period-major order
    DVector::from_column_slice(d.as_slice())
}

/// Rebuilds levels from the first time point and the stacked differences.
pub fn integrate_differences(first: &[f64], diffs: &DVector<f64>) -> DMatrix<f64> {
    let n = first.len();
    let periods = if n == 0 { 0 } else { diffs.len() / n };
    let mut levels = DMatrix::zeros(n, periods + 1);
    for i in 0..n {
        levels[(i, 0)] = first[i];
        for s in 0..periods {
            levels[(i, s + 1)] = levels[(i, s)] + diffs[s * n + i];
        }
    }
    levels
}

/// Writes one feature's lower-triangular block into `x` starting at `col0`.
fn fill_block(x: &mut DMatrix<f64>, col0: usize, dx: &DMatrix<f64>) {
    let (n, periods) = dx.shape();
    let mut col = col0;
    for k in 0..periods {
        let row0 = k * n;
        for lag in 0..=k {
            for i in 0..n {
                x[(row0 + i, col + lag)] = dx[(i, lag)];
            }
        }
        col += k + 1;
    }
}

fn check_times(dataset: &LongitudinalDataset) -> Result<usize, DesignError> {
    match dataset.n_times() {
        t if t < 2 => Err(DesignError::TooFewTimePoints(t)),
        t => Ok(t),
    }
}

/// Design for a single feature: `n(T−1) × T(T−1)/2`.
pub fn build_univariate_design(
    dataset: &LongitudinalDataset,
    feature: usize,
) -> Result<DifferencedDesign, DesignError> {
    let t = check_times(dataset)?;
    if feature >= dataset.n_features() {
        return Err(DesignError::FeatureOutOfRange {
            feature,
            n_features: dataset.n_features(),
        });
    }
    let n = dataset.n_subjects();
    let width = block_width(t);
    let mut x = DMatrix::zeros(n * (t - 1), width);
    fill_block(&mut x, 0, &difference_rows(dataset.feature(feature)));
    Ok(DifferencedDesign {
        y: difference_response(dataset)?,
        x,
        block_sizes: vec![width],
        feature_index: vec![feature],
        n_subjects: n,
        n_times: t,
    })
}

/// All features side by side: `[X¹ | X² | … | Xᵖ]`.
pub fn build_multivariate_design(
    dataset: &LongitudinalDataset,
) -> Result<DifferencedDesign, DesignError> {
    let t = check_times(dataset)?;
    let n = dataset.n_subjects();
    let p = dataset.n_features();
    let width = block_width(t);
    let mut x = DMatrix::zeros(n * (t - 1), p * width);
    for j in 0..p {
        fill_block(&mut x, j * width, &difference_rows(dataset.feature(j)));
    }
    Ok(DifferencedDesign {
        y: difference_response(dataset)?,
        x,
        block_sizes: vec![width; p],
        feature_index: (0..p).collect(),
        n_subjects: n,
        n_times: t,
    })
}

/// The `(T−1) × T` first-differencing matrix.
pub fn differencing_matrix(t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t.saturating_sub(1), t, |r, c| {
        if c == r + 1 {
            1.0
        } else if c == r {
            -1.0
        } else {
            0.0
        }
    })
}

/// Slope estimates of the level model with intercept and of the
/// differenced model, both by generalised least squares.
#[derive(Debug, Clone)]
pub struct GlsEquivalence {
    pub slope_level: DVector<f64>,
    pub slope_diff: DVector<f64>,
    pub max_abs_gap: f64,
}

/// Compares GLS slopes of `y = 1·b₀ + X·b₁ + e` (Cov e = Σ) with those of
/// `Dy = DX·b₁ + De` (Cov De = DΣDᵀ). The two agree whenever `[1 : X]`
/// has full column rank.
pub fn gls_equivalence_check(
    x_level: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<GlsEquivalence, DesignError> {
    let (t, k) = x_level.shape();
    if sigma.shape() != (t, t) || y.len() != t {
        return Err(DesignError::Dimension(format!(
            "X is {t}×{k}, Σ is {:?}, y has {}",
            sigma.shape(),
            y.len()
        )));
    }
    if t < 2 {
        return Err(DesignError::TooFewTimePoints(t));
    }
    let sym_gap = (sigma - sigma.transpose()).amax();
    if sym_gap > 1e-10 * sigma.amax().max(1.0) {
        return Err(DesignError::SingularCovariance);
    }
    let mut z = DMatrix::from_element(t, k + 1, 1.0);
    z.view_mut((0, 1), (t, k)).copy_from(x_level);
    if numerical_rank(&z) < k + 1 {
        return Err(DesignError::RankDeficientDesign);
    }

    let level = whitened_fit(&z, sigma, y)?;
    let slope_level = level.rows(1, k).into_owned();

    let d = differencing_matrix(t);
    let diff_cov = &d * sigma * d.transpose();
    let slope_diff = whitened_fit(&(&d * x_level), &diff_cov, &(&d * y))?;

    let max_abs_gap = (&slope_level - &slope_diff).amax();
    Ok(GlsEquivalence {
        slope_level,
        slope_diff,
        max_abs_gap,
    })
}

/// GLS via Cholesky whitening: solve `L⁻¹A b ≈ L⁻¹y` with `Σ = LLᵀ`.
fn whitened_fit(
    a: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>, DesignError> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or(DesignError::SingularCovariance)?;
    let l = chol.l();
    let aw = l
        .solve_lower_triangular(a)
        .ok_or(DesignError::SingularCovariance)?;
    let yw = l
        .solve_lower_triangular(y)
        .ok_or(DesignError::SingularCovariance)?;
    if numerical_rank(&aw) < a.ncols() {
        return Err(DesignError::RankDeficientDesign);
    }
    aw.svd(true, true)
        .solve(&yw, 0.0)
        .map_err(|_| DesignError::RankDeficientDesign)
}
