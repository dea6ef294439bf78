//! Conjugate normal-inverse-gamma regression and Zellner g-prior posteriors.
//!
//! The differenced model has no intercept, so every `R²` here is the
//! *uncentered* coefficient of determination `1 − ‖Y − Ŷ‖² / ‖Y‖²`. The
//! Bayes factors in [`crate::bayesfactor`] inherit this convention.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::linalg::{spd_inverse, symmetrize, LeastSquares, LinalgError};

/// Floor applied to a non-positive SURE minimiser.
pub const SURE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GPriorError {
    #[error("singular design (condition number of XᵀX {condition:e})")]
    SingularDesign { condition: f64 },
    #[error("underdetermined system: {rows} rows for {cols} columns")]
    UnderdeterminedSystem { rows: usize, cols: usize },
    #[error("resolved g = {0} is not positive")]
    NonPositiveG(f64),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("posterior rate b* = {0} is not positive; the posterior is improper")]
    ImproperPosterior(f64),
    #[error("OLS residual variance is zero; the SURE minimiser is unbounded")]
    ZeroResidualVariance,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl From<LinalgError> for GPriorError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Singular { condition } => GPriorError::SingularDesign { condition },
            LinalgError::Underdetermined { rows, cols } => {
                GPriorError::UnderdeterminedSystem { rows, cols }
            }
            LinalgError::NotPositiveDefinite => GPriorError::SingularDesign {
                condition: f64::INFINITY,
            },
            LinalgError::Dimension(s) => GPriorError::Dimension(s),
        }
    }
}

/// How `g` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GRule {
    /// `g = √n` with `n` the number of subjects.
    SqrtN,
    /// Closed-form minimiser of Stein's unbiased risk estimate, per fit.
    SureMin,
    Fixed(f64),
}

impl fmt::Display for GRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GRule::SqrtN => write!(f, "sqrtn"),
            GRule::SureMin => write!(f, "sure"),
            GRule::Fixed(g) => write!(f, "fixed:{g}"),
        }
    }
}

impl FromStr for GRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sqrtn" => Ok(GRule::SqrtN),
            "sure" => Ok(GRule::SureMin),
            other => {
                let value = other
                    .strip_prefix("fixed:")
                    .ok_or_else(|| format!("unknown g rule `{s}` (expected sqrtn, sure or fixed:VALUE)"))?;
                let g: f64 = value
                    .parse()
                    .map_err(|_| format!("invalid fixed g `{value}`"))?;
                if g > 0.0 && g.is_finite() {
                    Ok(GRule::Fixed(g))
                } else {
                    Err(format!("fixed g must be positive, got {g}"))
                }
            }
        }
    }
}

/// Prior specification for the g-prior fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GPriorSpec {
    pub g_rule: GRule,
    /// Prior mean; `None` means the zero vector.
    pub beta0: Option<DVector<f64>>,
    /// Inverse-gamma shape; 0 gives the improper limit.
    pub a: f64,
    /// Inverse-gamma rate; 0 gives the improper limit.
    pub b: f64,
}

impl Default for GPriorSpec {
    fn default() -> Self {
        Self {
            g_rule: GRule::SqrtN,
            beta0: None,
            a: 0.0,
            b: 0.0,
        }
    }
}

impl GPriorSpec {
    pub fn with_rule(g_rule: GRule) -> Self {
        Self {
            g_rule,
            ..Self::default()
        }
    }

    fn check(&self, k: usize) -> Result<DVector<f64>, GPriorError> {
        if let GRule::Fixed(g) = self.g_rule {
            if !(g > 0.0) {
                return Err(GPriorError::NonPositiveG(g));
            }
        }
        self.prior_mean(k)
    }

    /// Validates `a`, `b` and `β₀`, returning `β₀` (zeros when unset).
    fn prior_mean(&self, k: usize) -> Result<DVector<f64>, GPriorError> {
        if !(self.a >= 0.0) || !(self.b >= 0.0) {
            return Err(GPriorError::InvalidPrior(format!(
                "inverse-gamma parameters must be nonnegative (a = {}, b = {})",
                self.a, self.b
            )));
        }
        match &self.beta0 {
            Some(b0) if b0.len() != k => Err(GPriorError::Dimension(format!(
                "beta0 has length {} for {k} design columns",
                b0.len()
            ))),
            Some(b0) => Ok(b0.clone()),
            None => Ok(DVector::zeros(k)),
        }
    }
}

/// Ordinary least-squares summary.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta_hat: DVector<f64>,
    pub fitted: DVector<f64>,
    pub rss: f64,
    /// `RSS / (n − k)`.
    pub sigma2_hat: f64,
    /// Uncentered `R²`.
    pub r_squared: f64,
    pub xtx_inverse: DMatrix<f64>,
}

pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, GPriorError> {
    let ls = LeastSquares::fit(x, y)?;
    let (n, k) = x.shape();
    let tss = y.norm_squared();
    let r_squared = if tss > 0.0 {
        (1.0 - ls.rss / tss).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(OlsFit {
        sigma2_hat: ls.rss / (n - k) as f64,
        r_squared,
        xtx_inverse: ls.xtx_inverse(),
        beta_hat: ls.beta,
        fitted: ls.fitted,
        rss: ls.rss,
    })
}

/// Normal-inverse-gamma posterior `β | σ² ~ N(β*, σ²V*)`, `σ² ~ IG(a*, b*)`.
#[derive(Debug, Clone, Serialize)]
pub struct NigPosterior {
    pub beta_star: DVector<f64>,
    pub v_star: DMatrix<f64>,
    pub a_star: f64,
    pub b_star: f64,
    /// `g` actually used; `None` for a general `V₀`.
    pub g_used: Option<f64>,
    /// True when the SURE minimiser was non-positive and got floored.
    pub g_floored: bool,
    pub sigma2_hat: Option<f64>,
    pub r_squared: Option<f64>,
}

impl NigPosterior {
    /// Joint log density of `(β, σ²)`.
    pub fn log_density(&self, beta: &DVector<f64>, sigma2: f64) -> f64 {
        if !(sigma2 > 0.0) {
            return f64::NEG_INFINITY;
        }
        let k = self.beta_star.len() as f64;
        let chol = match self.v_star.clone().cholesky() {
            Some(c) => c,
            None => return f64::NAN,
        };
        let log_det_v: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let diff = beta - &self.beta_star;
        let w = chol.l().solve_lower_triangular(&diff).unwrap_or(diff);
        let quad = w.norm_squared();
        let ln_s2 = sigma2.ln();
        let normal = -0.5 * k * (2.0 * std::f64::consts::PI).ln() - 0.5 * k * ln_s2
            - 0.5 * log_det_v
            - quad / (2.0 * sigma2);
        let inv_gamma = self.a_star * self.b_star.ln() - ln_gamma(self.a_star)
            - (self.a_star + 1.0) * ln_s2
            - self.b_star / sigma2;
        normal + inv_gamma
    }
}

/// Conjugate update for a general prior `β | σ² ~ N(β₀, σ²V₀)`,
/// `σ² ~ IG(a, b)`. `spec.g_rule` is ignored.
pub fn nig_posterior(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &GPriorSpec,
    v0: &DMatrix<f64>,
) -> Result<NigPosterior, GPriorError> {
    let (n, k) = x.shape();
    if y.len() != n || v0.shape() != (k, k) {
        return Err(GPriorError::Dimension(format!(
            "X is {n}×{k}, y has {}, V₀ is {:?}",
            y.len(),
            v0.shape()
        )));
    }
    let beta0 = spec.prior_mean(k)?;
    let v0_inv = spd_inverse(v0)
        .map_err(|_| GPriorError::InvalidPrior("V₀ is not symmetric positive definite".into()))?;
    let xtx = x.transpose() * x;
    let v_star = spd_inverse(&(&v0_inv + &xtx))?;
    let beta_star = &v_star * (&v0_inv * &beta0 + x.transpose() * y);
    let resid = y - x * &beta_star;
    let shift = &beta_star - &beta0;
    let b_star = spec.b + 0.5 * (resid.norm_squared() + shift.dot(&(&v0_inv * &shift)));
    if !(b_star > 0.0) {
        return Err(GPriorError::ImproperPosterior(b_star));
    }
    let ols = ols_fit(x, y).ok();
    Ok(NigPosterior {
        beta_star,
        v_star,
        a_star: spec.a + n as f64 / 2.0,
        b_star,
        g_used: None,
        g_floored: false,
        sigma2_hat: ols.as_ref().map(|o| o.sigma2_hat),
        r_squared: ols.as_ref().map(|o| o.r_squared),
    })
}

/// A resolved `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedG {
    pub g: f64,
    pub floored: bool,
}

/// Resolves `rule` for one fit. `n_subjects` feeds the `√n` rule.
pub fn resolve_g(
    rule: GRule,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
    n_subjects: usize,
) -> Result<ResolvedG, GPriorError> {
    let resolved = match rule {
        GRule::SqrtN => ResolvedG {
            g: (n_subjects as f64).sqrt(),
            floored: false,
        },
        GRule::Fixed(g) => ResolvedG { g, floored: false },
        GRule::SureMin => {
            let s = sure_g(x, y, beta0)?;
            ResolvedG {
                g: s.g,
                floored: s.floored,
            }
        }
    };
    if !(resolved.g > 0.0) || !resolved.g.is_finite() {
        return Err(GPriorError::NonPositiveG(resolved.g));
    }
    Ok(resolved)
}

/// Zellner g-prior posterior (`V₀ = g(XᵀX)⁻¹`) in closed form:
/// `β* = β₀/(1+g) + g·β̂/(1+g)`, `V* = g/(1+g)·(XᵀX)⁻¹`.
pub fn gprior_posterior(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &GPriorSpec,
    n_subjects: usize,
) -> Result<NigPosterior, GPriorError> {
    let (n, k) = x.shape();
    let beta0 = spec.check(k)?;
    let ols = ols_fit(x, y)?;
    let ResolvedG { g, floored } = resolve_g(spec.g_rule, x, y, &beta0, n_subjects)?;
    let shrink = g / (1.0 + g);
    let beta_star = &beta0 / (1.0 + g) + &ols.beta_hat * shrink;
    let v_star = symmetrize(&(&ols.xtx_inverse * shrink));
    let offset = x * (&ols.beta_hat - &beta0);
    let b_star = spec.b + 0.5 * (ols.rss + offset.norm_squared() / (1.0 + g));
    if !(b_star > 0.0) {
        return Err(GPriorError::ImproperPosterior(b_star));
    }
    Ok(NigPosterior {
        beta_star,
        v_star,
        a_star: spec.a + n as f64 / 2.0,
        b_star,
        g_used: Some(g),
        g_floored: floored,
        sigma2_hat: Some(ols.sigma2_hat),
        r_squared: Some(ols.r_squared),
    })
}

/// SURE minimiser and whether it was floored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SureG {
    pub g: f64,
    /// Unfloored `‖Ŷ_OLS − Y₀‖² / (k σ̂²) − 1`.
    pub raw: f64,
    pub floored: bool,
}

/// `g* = ‖Ŷ_OLS − Xβ₀‖² / (k·σ̂²) − 1` with `k` the number of design
/// columns; non-positive values are floored at [`SURE_FLOOR`].
pub fn sure_g(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<SureG, GPriorError> {
    let ols = ols_fit(x, y)?;
    sure_g_from_fit(x, &ols, beta0)
}

fn sure_g_from_fit(
    x: &DMatrix<f64>,
    ols: &OlsFit,
    beta0: &DVector<f64>,
) -> Result<SureG, GPriorError> {
    let k = x.ncols();
    if beta0.len() != k {
        return Err(GPriorError::Dimension(format!(
            "beta0 has length {} for {k} design columns",
            beta0.len()
        )));
    }
    if !(ols.sigma2_hat > 0.0) {
        return Err(GPriorError::ZeroResidualVariance);
    }
    let spread = (&ols.fitted - x * beta0).norm_squared();
    let raw = spread / (k as f64 * ols.sigma2_hat) - 1.0;
    if raw <= 0.0 {
        log::debug!("SURE minimiser {raw} is not positive; flooring g at {SURE_FLOOR}");
        Ok(SureG {
            g: SURE_FLOOR,
            raw,
            floored: true,
        })
    } else {
        Ok(SureG {
            g: raw,
            raw,
            floored: false,
        })
    }
}

/// Stein's unbiased risk estimate of the g-prior fit,
/// `δ₀ = ‖Y − Ŷ_g‖² + (2·tr S − n)·σ̂²` with `Ŷ_g = Y₀/(1+g) + g·Ŷ_OLS/(1+g)`
/// and `tr S = g·k/(1+g)`.
pub fn sure_value(
    g: f64,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<f64, GPriorError> {
    if !(g > 0.0) {
        return Err(GPriorError::NonPositiveG(g));
    }
    let ols = ols_fit(x, y)?;
    let (n, k) = x.shape();
    let y0 = x * beta0;
    let fitted = &y0 / (1.0 + g) + &ols.fitted * (g / (1.0 + g));
    let trace = g * k as f64 / (1.0 + g);
    Ok((y - fitted).norm_squared() + (2.0 * trace - n as f64) * ols.sigma2_hat)
}
