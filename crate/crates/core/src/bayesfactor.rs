//! Null-based g-prior Bayes factors, the evidence scale, the Maruyama–George
//! gBF, and the per-feature univariate screen.
//!
//! All arithmetic is on the natural-log scale. A feature is *decisive* when
//! its Bayes factor exceeds 150.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::beta::ln_beta;
use thiserror::Error;

use crate::deltadesign::{block_width, build_univariate_design, DesignError};
use crate::gprior::{ols_fit, resolve_g, GPriorError, GPriorSpec};
use crate::longdata::LongitudinalDataset;

/// Bayes factor above which evidence is called decisive.
pub const DECISIVE_BF: f64 = 150.0;

/// Largest Bayes factor written to reports; larger values are capped.
pub const BF_DISPLAY_CAP: f64 = 1e308;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesFactorError {
    #[error("R² = {0} is outside [0, 1]")]
    InvalidR2(f64),
    #[error("degenerate degrees of freedom: n = {n}, p = {p}")]
    DegenerateDf { n: usize, p: usize },
    #[error("g = {0} is not positive")]
    NonPositiveG(f64),
    #[error("design matrix is zero")]
    ZeroDesign,
    #[error("beta function argument {0} is not positive")]
    DegenerateBeta(f64),
    #[error("perfect fit (R² = 1); gBF is unbounded")]
    PerfectFit,
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// Evidence against the null on the `2·ln BF` scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Evidence {
    /// `2 ln BF < 2`
    BareMention,
    /// `[2, 6)`
    Positive,
    /// `[6, 10)`
    Strong,
    /// `≥ 10`
    VeryStrong,
}

impl Evidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Evidence::BareMention => "BareMention",
            Evidence::Positive => "Positive",
            Evidence::Strong => "Strong",
            Evidence::VeryStrong => "VeryStrong",
        }
    }
}

pub fn classify_bf(two_log_bf: f64) -> Evidence {
    if two_log_bf >= 10.0 {
        Evidence::VeryStrong
    } else if two_log_bf >= 6.0 {
        Evidence::Strong
    } else if two_log_bf >= 2.0 {
        Evidence::Positive
    } else {
        Evidence::BareMention
    }
}

/// `BF > 150`, i.e. `2 ln BF > 2 ln 150 ≈ 10.02`.
pub fn is_decisive(two_log_bf: f64) -> bool {
    two_log_bf > decisive_threshold()
}

/// The decisive rule on the `2 ln BF` scale.
pub fn decisive_threshold() -> f64 {
    2.0 * DECISIVE_BF.ln()
}

/// `ln BF[M_γ : M_N] = (n−p−1)/2·ln(1+g) − (n−1)/2·ln(1 + g(1−R²))`.
pub fn null_based_bf(
    r_squared: f64,
    g: f64,
    n: usize,
    p_gamma: usize,
) -> Result<f64, BayesFactorError> {
    if !(0.0..=1.0).contains(&r_squared) {
        return Err(BayesFactorError::InvalidR2(r_squared));
    }
    if !(g > 0.0) || !g.is_finite() {
        return Err(BayesFactorError::NonPositiveG(g));
    }
    if n <= p_gamma + 1 {
        return Err(BayesFactorError::DegenerateDf { n, p: p_gamma });
    }
    let n = n as f64;
    let p = p_gamma as f64;
    Ok(0.5 * (n - p - 1.0) * g.ln_1p() - 0.5 * (n - 1.0) * (g * (1.0 - r_squared)).ln_1p())
}

/// Which branch of the gBF formula was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GbfBranch {
    /// `q < n − 1`
    FullRank,
    /// `q ≥ n − 1`, via the Moore–Penrose least-squares estimate.
    MinimumNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GbfResult {
    pub log_gbf: f64,
    pub branch: GbfBranch,
    /// Number of design columns.
    pub q: usize,
}

/// Maruyama–George g-prior Bayes factor against the null model.
///
/// `y` is rescaled to unit Euclidean norm first, which makes the result
/// invariant to the scale of the response. With `d̄` the geometric mean of
/// the nonzero singular values of `X` and `d_q` the smallest one:
///
/// * `q < n−1`: `ln(d̄/d_q) − (1/4 + q/2)·ln(1−R² + d_q²‖β̂‖²) − ln C(n,q)
///   − ((n−q)/2 − 3/4)·ln(1−R²)` with
///   `C(n,q) = B(1/4, (n−q)/2−3/4) / B(q/2+1/4, (n−q)/2−3/4)`;
/// * `q ≥ n−1`: `(1−n)·ln(d̄·‖β̂_MP‖)`.
///
/// This screen is auxiliary: it is not part of the default pipelines.
pub fn maruyama_george_gbf(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<GbfResult, BayesFactorError> {
    let (n, q) = x.shape();
    let y_norm = y.norm();
    if x.amax() == 0.0 || q == 0 {
        return Err(BayesFactorError::ZeroDesign);
    }
    if y.len() != n || !(y_norm > 0.0) {
        return Err(BayesFactorError::DegenerateDf { n, p: q });
    }
    let y = y / y_norm;
    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    let tol = n.max(q) as f64 * f64::EPSILON * sv.max();
    let nonzero: Vec<f64> = sv.iter().copied().filter(|&s| s > tol).collect();
    if nonzero.is_empty() {
        return Err(BayesFactorError::ZeroDesign);
    }
    let log_dbar = nonzero.iter().map(|d| d.ln()).sum::<f64>() / nonzero.len() as f64;
    let beta = svd
        .solve(&y, tol)
        .map_err(|_| BayesFactorError::ZeroDesign)?;

    if q + 1 >= n {
        let log_gbf = (1.0 - n as f64) * (log_dbar + beta.norm().ln());
        return Ok(GbfResult {
            log_gbf,
            branch: GbfBranch::MinimumNorm,
            q,
        });
    }

    if nonzero.len() < q {
        return Err(BayesFactorError::ZeroDesign);
    }
    let d_min = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
    let rss = (&y - x * &beta).norm_squared();
    let one_minus_r2 = rss.clamp(0.0, 1.0);
    if one_minus_r2 == 0.0 {
        return Err(BayesFactorError::PerfectFit);
    }
    let shape = (n - q) as f64 / 2.0 - 0.75;
    if !(shape > 0.0) {
        return Err(BayesFactorError::DegenerateBeta(shape));
    }
    let qf = q as f64;
    let ln_c = ln_beta(0.25, shape) - ln_beta(qf / 2.0 + 0.25, shape);
    let log_gbf = (log_dbar - d_min.ln())
        - (0.25 + qf / 2.0) * (one_minus_r2 + d_min * d_min * beta.norm_squared()).ln()
        - ln_c
        - shape * one_minus_r2.ln();
    Ok(GbfResult {
        log_gbf,
        branch: GbfBranch::FullRank,
        q,
    })
}

/// One feature's row in a Bayes-factor screen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BayesFactorReport {
    pub feature_index: usize,
    pub feature_name: String,
    pub log_bf: f64,
    pub two_log_bf: f64,
    pub evidence: Evidence,
    pub decisive: bool,
    pub g_used: f64,
    pub g_floored: bool,
    pub r_squared: f64,
    /// 1 is strongest.
    pub rank: usize,
}

impl BayesFactorReport {
    /// `BF` capped at [`BF_DISPLAY_CAP`].
    pub fn bf_display(&self) -> f64 {
        self.log_bf.exp().min(BF_DISPLAY_CAP)
    }
}

/// A feature that could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedFeature {
    pub feature_index: usize,
    pub feature_name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenResult {
    /// Sorted by decreasing `two_log_bf`, ties by feature index.
    pub reports: Vec<BayesFactorReport>,
    pub skipped: Vec<SkippedFeature>,
}

impl ScreenResult {
    pub fn decisive_features(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .reports
            .iter()
            .filter(|r| r.decisive)
            .map(|r| r.feature_index)
            .collect();
        v.sort_unstable();
        v
    }
}

fn score_feature(
    dataset: &LongitudinalDataset,
    spec: &GPriorSpec,
    j: usize,
) -> Result<Result<BayesFactorReport, String>, BayesFactorError> {
    let design = build_univariate_design(dataset, j)?;
    let (n_rows, k) = design.x.shape();
    let outcome = (|| -> Result<BayesFactorReport, String> {
        let text = |e: GPriorError| e.to_string();
        let ols = ols_fit(&design.x, &design.y).map_err(text)?;
        let beta0 = spec.beta0.clone().unwrap_or_else(|| DVector::zeros(k));
        let g = resolve_g(spec.g_rule, &design.x, &design.y, &beta0, design.n_subjects)
            .map_err(text)?;
        let log_bf = null_based_bf(ols.r_squared, g.g, n_rows, k).map_err(|e| e.to_string())?;
        let two_log_bf = 2.0 * log_bf;
        Ok(BayesFactorReport {
            feature_index: j,
            feature_name: dataset.feature_names()[j].clone(),
            log_bf,
            two_log_bf,
            evidence: classify_bf(two_log_bf),
            decisive: is_decisive(two_log_bf),
            g_used: g.g,
            g_floored: g.floored,
            r_squared: ols.r_squared,
            rank: 0,
        })
    })();
    Ok(outcome)
}

/// Scores every feature with its own univariate g-prior fit.
///
/// The likelihood sample size in the Bayes factor is the number of
/// differenced observations `n(T−1)`; the `√n` rule uses the subject count.
/// Features whose fit fails (e.g. a constant feature gives a zero design)
/// are returned in `skipped`.
pub fn univariate_screen(
    dataset: &LongitudinalDataset,
    spec: &GPriorSpec,
) -> Result<ScreenResult, BayesFactorError> {
    if dataset.n_times() < 2 {
        return Err(DesignError::TooFewTimePoints(dataset.n_times()).into());
    }
    let k = block_width(dataset.n_times());
    let rows = dataset.n_subjects() * (dataset.n_times() - 1);
    if rows <= k + 1 {
        return Err(BayesFactorError::DegenerateDf { n: rows, p: k });
    }
    let scored: Vec<_> = (0..dataset.n_features())
        .into_par_iter()
        .map(|j| score_feature(dataset, spec, j))
        .collect::<Result<_, _>>()?;

    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for (j, s) in scored.into_iter().enumerate() {
        match s {
            Ok(r) => reports.push(r),
            Err(reason) => {
                log::warn!("skipping feature `{}`: {reason}", dataset.feature_names()[j]);
                skipped.push(SkippedFeature {
                    feature_index: j,
                    feature_name: dataset.feature_names()[j].clone(),
                    reason,
                })
            }
        }
    }
    reports.sort_by(|a, b| {
        b.two_log_bf
            .total_cmp(&a.two_log_bf)
            .then(a.feature_index.cmp(&b.feature_index))
    });
    for (i, r) in reports.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(ScreenResult { reports, skipped })
}

/// Per-feature gBF on each univariate design, plus the gBF of the joint
/// design over all features.
#[derive(Debug, Clone, Serialize)]
pub struct GbfScreen {
    pub features: Vec<GbfFeature>,
    pub joint: Option<GbfResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GbfFeature {
    pub feature_index: usize,
    pub feature_name: String,
    pub log_gbf: Option<f64>,
    pub branch: Option<GbfBranch>,
    pub error: Option<String>,
}

pub fn gbf_screen(dataset: &LongitudinalDataset) -> Result<GbfScreen, BayesFactorError> {
    let features = (0..dataset.n_features())
        .into_par_iter()
        .map(|j| {
            let design = build_univariate_design(dataset, j)?;
            let res = maruyama_george_gbf(&design.x, &design.y);
            Ok(GbfFeature {
                feature_index: j,
                feature_name: dataset.feature_names()[j].clone(),
                log_gbf: res.as_ref().ok().map(|r| r.log_gbf),
                branch: res.as_ref().ok().map(|r| r.branch),
                error: res.err().map(|e| e.to_string()),
            })
        })
        .collect::<Result<Vec<_>, BayesFactorError>>()?;
    let joint_design = crate::deltadesign::build_multivariate_design(dataset)?;
    let joint = maruyama_george_gbf(&joint_design.x, &joint_design.y).ok();
    Ok(GbfScreen { features, joint })
}

#[derive(Serialize)]
struct ReportRow<'a> {
    rank: usize,
    feature: &'a str,
    two_log_bf: f64,
    bf_display: f64,
    evidence: &'static str,
    decisive: bool,
    g_used: f64,
    r_squared: f64,
}

impl<'a> From<&'a BayesFactorReport> for ReportRow<'a> {
    fn from(r: &'a BayesFactorReport) -> Self {
        ReportRow {
            rank: r.rank,
            feature: &r.feature_name,
            two_log_bf: r.two_log_bf,
            bf_display: r.bf_display(),
            evidence: r.evidence.as_str(),
            decisive: r.decisive,
            g_used: r.g_used,
            r_squared: r.r_squared,
        }
    }
}

/// CSV with columns
/// `rank,feature,two_log_bf,bf_display,evidence,decisive,g_used,r_squared`.
pub fn write_reports_csv<W: Write>(reports: &[BayesFactorReport], writer: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in reports {
        wtr.serialize(ReportRow::from(r))?;
    }
    wtr.flush()?;
    Ok(())
}

/// JSON object with a `reports` array (same fields as the CSV) and a
/// `skipped` array.
pub fn screen_to_json(result: &ScreenResult) -> serde_json::Value {
    let rows: Vec<ReportRow> = result.reports.iter().map(ReportRow::from).collect();
    serde_json::json!({
        "reports": rows,
        "skipped": result.skipped,
    })
}
