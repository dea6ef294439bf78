//! Spike-and-slab Bayesian group lasso.
//!
//! Hierarchy, for groups `j = 1..G` of width `m_j`:
//!
//! ```text
//! Y | X, β, σ²     ~ N(Xβ, σ² I)
//! β_j | σ², τ²_j   ~ (1 − π₀)·N(0, σ² τ²_j I) + π₀·δ₀
//! τ²_j             ~ Gamma((m_j + 1)/2, rate = λ²/2)
//! σ²               ~ 1/σ²   (or a proper inverse gamma)
//! π₀               ~ Beta(a, b)
//! ```
//!
//! Block Gibbs full conditionals:
//!
//! * `β_j | rest`: with partial residual `r = Y − X₋ⱼβ₋ⱼ`,
//!   `A = X_jᵀX_j + τ_j⁻² I`, the slab-vs-spike log odds are
//!   `ln((1−π₀)/π₀) − (m/2) ln τ²_j − ½ ln|A| + r ᵀX_j A⁻¹ X_jᵀ r / (2σ²)`;
//!   a slab draw is `N(A⁻¹X_jᵀr, σ² A⁻¹)`.
//! * `1/τ²_j | β_j ≠ 0 ~ InverseGaussian(√(λ²σ²/‖β_j‖²), λ²)`; for a zero
//!   group `τ²_j` is redrawn from its prior.
//! * `σ² | rest ~ IG(N/2 + Σ_{β_j≠0} m_j/2, ‖Y − Xβ‖²/2 + Σ_{β_j≠0} ‖β_j‖²/(2τ²_j))`.
//! * `π₀ | rest ~ Beta(a + #zero groups, b + #nonzero groups)`.
//!
//! `λ` is tuned by Monte-Carlo EM before the main chain:
//! `λ⁽ᵏ⁾ = √((P + G) / Σ_j mean(τ²_j))` with `P` the total coefficient count.
//!
//! Groups are selected by posterior-median thresholding. Spike draws are
//! exact zero vectors, so a group that is zero in more than half of the
//! retained draws has a median of exactly `0.0` in every component.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, InverseGaussian, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deltadesign::DifferencedDesign;
use crate::linalg::{backward_substitute_transposed, cholesky_in_place, forward_substitute};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GibbsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("empty chain")]
    EmptyChain,
    #[error("non-finite or non-positive σ² draw at iteration {iteration}")]
    NonConvergentSigma { iteration: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Prior on the noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaPrior {
    /// Improper `π(σ²) ∝ 1/σ²`.
    Jeffreys,
    InverseGamma { shape: f64, rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Total sweeps of the main chain, burn-in included.
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub pi0_beta_a: f64,
    pub pi0_beta_b: f64,
    pub lambda_init: f64,
    /// Monte-Carlo EM rounds before the main chain; 0 keeps `lambda_init`.
    pub mcem_rounds: usize,
    pub mcem_inner_iters: usize,
    /// Scale design columns to unit mean square (Euclidean norm `√N`) while
    /// sampling. Columns are not centred.
    pub standardize: bool,
    pub sigma2_prior: SigmaPrior,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            burn_in: 5_000,
            seed: 0,
            pi0_beta_a: 1.0,
            pi0_beta_b: 1.0,
            lambda_init: 1.0,
            mcem_rounds: 5,
            mcem_inner_iters: 1_000,
            standardize: true,
            sigma2_prior: SigmaPrior::Jeffreys,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<(), GibbsError> {
        let bad = |msg: String| Err(GibbsError::InvalidConfig(msg));
        if self.n_iter == 0 || self.burn_in >= self.n_iter {
            return bad(format!(
                "need 0 ≤ burn_in < n_iter (burn_in = {}, n_iter = {})",
                self.burn_in, self.n_iter
            ));
        }
        if !(self.pi0_beta_a > 0.0 && self.pi0_beta_b > 0.0) {
            return bad("π₀ Beta parameters must be positive".into());
        }
        if !(self.lambda_init > 0.0 && self.lambda_init.is_finite()) {
            return bad(format!("lambda_init must be positive, got {}", self.lambda_init));
        }
        if self.mcem_rounds > 0 && self.mcem_inner_iters == 0 {
            return bad("mcem_inner_iters must be positive".into());
        }
        if let SigmaPrior::InverseGamma { shape, rate } = self.sigma2_prior {
            if !(shape > 0.0 && rate > 0.0) {
                return bad("inverse-gamma σ² prior needs positive shape and rate".into());
            }
        }
        Ok(())
    }
}

/// Mean with a central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IntervalSummary {
    pub fn from_draws(draws: &[f64]) -> Self {
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean: draws.iter().sum::<f64>() / draws.len().max(1) as f64,
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let h = q.clamp(0.0, 1.0) * (len - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Post-burn-in summary of one chain, on the original column scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    /// Dataset feature index of each group.
    pub group_features: Vec<usize>,
    /// Componentwise posterior medians per group.
    pub group_medians: Vec<Vec<f64>>,
    /// Fraction of retained draws with `β_j ≠ 0`.
    pub inclusion_prop: Vec<f64>,
    /// Some component median is nonzero.
    pub selected: Vec<bool>,
    /// `λ` before the first MC-EM round, then after each round.
    pub lambda_trace: Vec<f64>,
    pub sigma2_summary: IntervalSummary,
    pub pi0_summary: IntervalSummary,
    pub n_draws: usize,
}

impl ChainSummary {
    pub fn selected_features(&self) -> Vec<usize> {
        self.group_features
            .iter()
            .zip(&self.selected)
            .filter(|(_, &s)| s)
            .map(|(&f, _)| f)
            .collect()
    }
}

/// Retained draws of one group: the nonzero draws, flattened, and how many
/// draws were the zero vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupDraws {
    pub width: usize,
    pub nonzero: Vec<f64>,
    pub zero_count: usize,
}

impl GroupDraws {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            ..Self::default()
        }
    }

    pub fn n_draws(&self) -> usize {
        self.zero_count + self.nonzero.len() / self.width.max(1)
    }

    pub fn push(&mut self, beta: &[f64]) {
        if beta.iter().all(|&b| b == 0.0) {
            self.zero_count += 1;
        } else {
            self.nonzero.extend_from_slice(beta);
        }
    }
}

/// Every retained draw, for the optional binary dump. `beta` is
/// `draws × P` on the original scale, `tau2` is `draws × G`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub beta: DMatrix<f64>,
    pub tau2: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    pub pi0: Vec<f64>,
}

impl ChainDraws {
    pub fn n_draws(&self) -> usize {
        self.sigma2.len()
    }

    pub fn n_params(&self) -> usize {
        self.beta.ncols() + self.tau2.ncols() + 2
    }
}

/// Median of `nonzero ∪ {0 × zeros}`; even counts average the middle pair.
pub fn median_with_zeros(nonzero: &mut [f64], zeros: usize) -> Option<f64> {
    let total = nonzero.len() + zeros;
    if total == 0 {
        return None;
    }
    nonzero.sort_by(f64::total_cmp);
    let negatives = nonzero.partition_point(|&v| v < 0.0);
    let kth = |idx: usize| -> f64 {
        if idx < negatives {
            nonzero[idx]
        } else if idx < negatives + zeros {
            0.0
        } else {
            nonzero[idx - zeros]
        }
    };
    Some(if total % 2 == 1 {
        kth(total / 2)
    } else {
        let (a, b) = (kth(total / 2 - 1), kth(total / 2));
        if a == b {
            a
        } else {
            0.5 * (a + b)
        }
    })
}

/// Componentwise posterior medians and the selection flag per group.
pub fn posterior_median_select(
    groups: &[GroupDraws],
) -> Result<(Vec<Vec<f64>>, Vec<bool>), GibbsError> {
    let mut medians = Vec::with_capacity(groups.len());
    let mut selected = Vec::with_capacity(groups.len());
    for g in groups {
        if g.n_draws() == 0 {
            return Err(GibbsError::EmptyChain);
        }
        let rows = g.nonzero.len() / g.width.max(1);
        let med: Vec<f64> = (0..g.width)
            .map(|c| {
                let mut col: Vec<f64> = (0..rows).map(|r| g.nonzero[r * g.width + c]).collect();
                median_with_zeros(&mut col, g.zero_count).unwrap_or(0.0)
            })
            .collect();
        selected.push(med.iter().any(|&v| v != 0.0));
        medians.push(med);
    }
    Ok((medians, selected))
}

/// MC-EM update `λ = √((P + G) / Σ_g mean(τ²_g))` from per-group draws.
pub fn mcem_lambda_update(tau2_samples: &[Vec<f64>], p: usize) -> Result<f64, GibbsError> {
    if tau2_samples.is_empty() || tau2_samples.iter().any(Vec::is_empty) {
        return Err(GibbsError::EmptyChain);
    }
    if tau2_samples.iter().flatten().any(|&t| !(t > 0.0)) {
        return Err(GibbsError::Numerical("τ² samples must be positive".into()));
    }
    let total: f64 = tau2_samples
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .sum();
    Ok(lambda_from_total(p, tau2_samples.len(), total))
}

fn lambda_from_total(p: usize, groups: usize, tau2_mean_total: f64) -> f64 {
    ((p + groups) as f64 / tau2_mean_total).sqrt()
}

/// Group layout plus precomputed cross products.
struct Blocks {
    n: usize,
    offsets: Vec<usize>,
    widths: Vec<usize>,
    /// Column-major `n × P` design (possibly rescaled).
    x: Vec<f64>,
    /// Row-major `m×m` Gram matrix per group.
    gram: Vec<Vec<f64>>,
    /// Column scale factors (1 when not standardising).
    scale: Vec<f64>,
}

impl Blocks {
    fn new(design: &DifferencedDesign, standardize: bool) -> Result<Self, GibbsError> {
        let (n, p) = design.x.shape();
        if design.y.len() != n {
            return Err(GibbsError::DimensionMismatch(format!(
                "design has {n} rows, response has {}",
                design.y.len()
            )));
        }
        if design.block_sizes.is_empty() || design.block_sizes.iter().any(|&w| w == 0) {
            return Err(GibbsError::DimensionMismatch("design has no groups".into()));
        }
        if design.block_sizes.iter().sum::<usize>() != p {
            return Err(GibbsError::DimensionMismatch(format!(
                "block sizes sum to {}, design has {p} columns",
                design.block_sizes.iter().sum::<usize>()
            )));
        }
        if design.feature_index.len() != design.block_sizes.len() {
            return Err(GibbsError::DimensionMismatch(
                "feature_index and block_sizes differ in length".into(),
            ));
        }
        let mut x = design.x.as_slice().to_vec();
        let mut scale = vec![1.0; p];
        if standardize {
            let root_n = (n as f64).sqrt();
            for (c, s) in scale.iter_mut().enumerate() {
                let col = &mut x[c * n..(c + 1) * n];
                let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    *s = norm / root_n;
                    col.iter_mut().for_each(|v| *v /= *s);
                }
            }
        }
        let offsets = design.block_offsets();
        let widths = design.block_sizes.clone();
        let gram = offsets
            .iter()
            .zip(&widths)
            .map(|(&o, &m)| {
                let mut g = vec![0.0; m * m];
                for a in 0..m {
                    for b in 0..=a {
                        let ca = &x[(o + a) * n..(o + a + 1) * n];
                        let cb = &x[(o + b) * n..(o + b + 1) * n];
                        let d: f64 = ca.iter().zip(cb).map(|(u, v)| u * v).sum();
                        g[a * m + b] = d;
                        g[b * m + a] = d;
                    }
                }
                g
            })
            .collect();
        Ok(Self {
            n,
            offsets,
            widths,
            x,
            gram,
            scale,
        })
    }

    fn col(&self, c: usize) -> &[f64] {
        &self.x[c * self.n..(c + 1) * self.n]
    }
}

/// Sampler state.
struct State {
    beta: Vec<f64>,
    active: Vec<bool>,
    tau2: Vec<f64>,
    sigma2: f64,
    pi0: f64,
    resid: Vec<f64>,
}

struct Sampler<'a> {
    blocks: &'a Blocks,
    y: &'a [f64],
    config: &'a GibbsConfig,
    rng: ChaCha8Rng,
    state: State,
    // scratch
    partial: Vec<f64>,
    chol: Vec<f64>,
    work: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn new(blocks: &'a Blocks, y: &'a [f64], config: &'a GibbsConfig) -> Self {
        let p: usize = blocks.widths.iter().sum();
        let g = blocks.widths.len();
        let n = blocks.n;
        let sigma2 = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).max(1e-8);
        let max_w = blocks.widths.iter().copied().max().unwrap_or(1);
        Self {
            blocks,
            y,
            config,
            rng: stream_rng(config.seed, 0, Stream::Sampler),
            state: State {
                beta: vec![0.0; p],
                active: vec![false; g],
                tau2: vec![1.0; g],
                sigma2,
                pi0: 0.5,
                resid: y.to_vec(),
            },
            partial: vec![0.0; n],
            chol: vec![0.0; max_w * max_w],
            work: vec![0.0; max_w],
        }
    }

    fn update_group(&mut self, j: usize) -> Result<(), GibbsError> {
        let b = self.blocks;
        let (o, m) = (b.offsets[j], b.widths[j]);
        let st = &mut self.state;
        self.partial.copy_from_slice(&st.resid);
        if st.active[j] {
            for a in 0..m {
                let coef = st.beta[o + a];
                for (r, xv) in self.partial.iter_mut().zip(b.col(o + a)) {
                    *r += xv * coef;
                }
            }
        }
        let chol = &mut self.chol[..m * m];
        chol.copy_from_slice(&b.gram[j]);
        let inv_tau2 = 1.0 / st.tau2[j];
        for a in 0..m {
            chol[a * m + a] += inv_tau2;
        }
        if !cholesky_in_place(chol, m) {
            return Err(GibbsError::Numerical(format!(
                "slab precision of group {j} is not positive definite"
            )));
        }
        let w = &mut self.work[..m];
        for a in 0..m {
            w[a] = b.col(o + a).iter().zip(&self.partial).map(|(x, r)| x * r).sum();
        }
        forward_substitute(chol, m, w);
        let quad: f64 = w.iter().map(|v| v * v).sum();
        let half_log_det: f64 = (0..m).map(|a| chol[a * m + a].ln()).sum();
        let log_odds = (1.0 - st.pi0).ln() - st.pi0.ln() - 0.5 * m as f64 * st.tau2[j].ln()
            - half_log_det
            + quad / (2.0 * st.sigma2);
        let p_spike = if log_odds > 0.0 {
            let e = (-log_odds).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + log_odds.exp())
        };
        let u: f64 = self.rng.random();
        if u < p_spike {
            st.active[j] = false;
            st.beta[o..o + m].iter_mut().for_each(|v| *v = 0.0);
        } else {
            let sd = st.sigma2.sqrt();
            for v in w.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *v += sd * z;
            }
            backward_substitute_transposed(chol, m, w);
            st.active[j] = true;
            st.beta[o..o + m].copy_from_slice(w);
            for a in 0..m {
                let coef = w[a];
                for (r, xv) in self.partial.iter_mut().zip(b.col(o + a)) {
                    *r -= xv * coef;
                }
            }
        }
        st.resid.copy_from_slice(&self.partial);
        Ok(())
    }

    fn sweep(&mut self, lambda: f64, iteration: usize) -> Result<(), GibbsError> {
        let groups = self.blocks.widths.len();
        for j in 0..groups {
            self.update_group(j)?;
        }
        self.refresh_residual();

        let lambda2 = lambda * lambda;
        let st = &mut self.state;
        for j in 0..groups {
            let m = self.blocks.widths[j];
            let o = self.blocks.offsets[j];
            let tau2 = if st.active[j] {
                let norm2: f64 = st.beta[o..o + m].iter().map(|v| v * v).sum();
                let mean = (lambda2 * st.sigma2 / norm2).sqrt();
                let ig = InverseGaussian::new(mean, lambda2)
                    .map_err(|e| GibbsError::Numerical(format!("inverse Gaussian: {e}")))?;
                1.0 / ig.sample(&mut self.rng)
            } else {
                let gamma = Gamma::new((m as f64 + 1.0) / 2.0, 2.0 / lambda2)
                    .map_err(|e| GibbsError::Numerical(format!("gamma: {e}")))?;
                gamma.sample(&mut self.rng)
            };
            if !(tau2 > 0.0 && tau2.is_finite()) {
                return Err(GibbsError::Numerical(format!(
                    "τ² draw {tau2} for group {j} at iteration {iteration}"
                )));
            }
            st.tau2[j] = tau2;
        }

        let mut shape = self.blocks.n as f64 / 2.0;
        let mut rate = st.resid.iter().map(|r| r * r).sum::<f64>() / 2.0;
        for j in (0..groups).filter(|&j| st.active[j]) {
            let (o, m) = (self.blocks.offsets[j], self.blocks.widths[j]);
            shape += m as f64 / 2.0;
            rate += st.beta[o..o + m].iter().map(|v| v * v).sum::<f64>() / (2.0 * st.tau2[j]);
        }
        if let SigmaPrior::InverseGamma { shape: a0, rate: b0 } = self.config.sigma2_prior {
            shape += a0;
            rate += b0;
        }
        let precision = Gamma::new(shape, 1.0 / rate)
            .map_err(|_| GibbsError::NonConvergentSigma { iteration })?
            .sample(&mut self.rng);
        let sigma2 = 1.0 / precision;
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(GibbsError::NonConvergentSigma { iteration });
        }
        st.sigma2 = sigma2;

        let nonzero = st.active.iter().filter(|&&a| a).count();
        let beta = Beta::new(
            self.config.pi0_beta_a + (groups - nonzero) as f64,
            self.config.pi0_beta_b + nonzero as f64,
        )
        .map_err(|e| GibbsError::Numerical(format!("beta: {e}")))?;
        // keep π₀ strictly inside (0, 1) so the log odds stay finite
        st.pi0 = beta.sample(&mut self.rng).clamp(1e-300, 1.0 - 1e-16);
        Ok(())
    }

    /// Recomputes `Y − Xβ` from the active groups to stop drift.
    fn refresh_residual(&mut self) {
        let b = self.blocks;
        let st = &mut self.state;
        st.resid.copy_from_slice(self.y);
        for j in (0..b.widths.len()).filter(|&j| st.active[j]) {
            for a in 0..b.widths[j] {
                let c = b.offsets[j] + a;
                let coef = st.beta[c];
                for (r, xv) in st.resid.iter_mut().zip(b.col(c)) {
                    *r -= xv * coef;
                }
            }
        }
    }
}

/// Runs MC-EM for `λ` and then the main chain; returns the summary.
pub fn run_gibbs(design: &DifferencedDesign, config: &GibbsConfig) -> Result<ChainSummary, GibbsError> {
    run_chain(design, config, false).map(|(s, _)| s)
}

/// As [`run_gibbs`], also returning every retained draw.
pub fn run_gibbs_with_draws(
    design: &DifferencedDesign,
    config: &GibbsConfig,
) -> Result<(ChainSummary, ChainDraws), GibbsError> {
    run_chain(design, config, true).map(|(s, d)| (s, d.expect("draws were recorded")))
}

fn run_chain(
    design: &DifferencedDesign,
    config: &GibbsConfig,
    keep_draws: bool,
) -> Result<(ChainSummary, Option<ChainDraws>), GibbsError> {
    config.validate()?;
    let blocks = Blocks::new(design, config.standardize)?;
    let y = design.y.as_slice();
    let groups = blocks.widths.len();
    let p: usize = blocks.widths.iter().sum();
    let mut sampler = Sampler::new(&blocks, y, config);

    let mut lambda = config.lambda_init;
    let mut lambda_trace = vec![lambda];
    let mut iteration = 0;
    for _ in 0..config.mcem_rounds {
        let mut tau2_sum = vec![0.0; groups];
        for _ in 0..config.mcem_inner_iters {
            sampler.sweep(lambda, iteration)?;
            iteration += 1;
            for (s, t) in tau2_sum.iter_mut().zip(&sampler.state.tau2) {
                *s += t;
            }
        }
        let total: f64 = tau2_sum
            .iter()
            .map(|s| s / config.mcem_inner_iters as f64)
            .sum();
        lambda = lambda_from_total(p, groups, total);
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(GibbsError::Numerical(format!("MC-EM produced λ = {lambda}")));
        }
        lambda_trace.push(lambda);
    }

    let kept = config.n_iter - config.burn_in;
    let mut group_draws: Vec<GroupDraws> = blocks.widths.iter().map(|&m| GroupDraws::new(m)).collect();
    let mut active_count = vec![0usize; groups];
    let mut sigma2_draws = Vec::with_capacity(kept);
    let mut pi0_draws = Vec::with_capacity(kept);
    let mut draws = keep_draws.then(|| ChainDraws {
        beta: DMatrix::zeros(kept, p),
        tau2: DMatrix::zeros(kept, groups),
        sigma2: Vec::with_capacity(kept),
        pi0: Vec::with_capacity(kept),
    });

    for it in 0..config.n_iter {
        sampler.sweep(lambda, iteration)?;
        iteration += 1;
        if it < config.burn_in {
            continue;
        }
        let row = it - config.burn_in;
        let st = &sampler.state;
        for j in 0..groups {
            let (o, m) = (blocks.offsets[j], blocks.widths[j]);
            group_draws[j].push(&st.beta[o..o + m]);
            if st.active[j] {
                active_count[j] += 1;
            }
        }
        sigma2_draws.push(st.sigma2);
        pi0_draws.push(st.pi0);
        if let Some(d) = draws.as_mut() {
            for c in 0..p {
                d.beta[(row, c)] = st.beta[c] / blocks.scale[c];
            }
            for j in 0..groups {
                d.tau2[(row, j)] = st.tau2[j];
            }
            d.sigma2.push(st.sigma2);
            d.pi0.push(st.pi0);
        }
    }

    let (mut group_medians, selected) = posterior_median_select(&group_draws)?;
    for (j, med) in group_medians.iter_mut().enumerate() {
        let o = blocks.offsets[j];
        for (a, v) in med.iter_mut().enumerate() {
            *v /= blocks.scale[o + a];
        }
    }
    let summary = ChainSummary {
        group_features: design.feature_index.clone(),
        group_medians,
        inclusion_prop: active_count.iter().map(|&c| c as f64 / kept as f64).collect(),
        selected,
        lambda_trace,
        sigma2_summary: IntervalSummary::from_draws(&sigma2_draws),
        pi0_summary: IntervalSummary::from_draws(&pi0_draws),
        n_draws: kept,
    };
    Ok((summary, draws))
}

/// Magic bytes of the raw-draw dump.
pub const DRAWS_MAGIC: &[u8; 4] = b"BGLS";
pub const DRAWS_VERSION: u32 = 1;

/// Writes draws column by column: a 16-byte header (`"BGLS"`, version,
/// draw count, parameter count as little-endian `u32`) followed by each
/// parameter's draws as little-endian `f64`. Parameter order: `β` (original
/// scale), `τ²`, `σ²`, `π₀`.
pub fn write_draws<W: Write>(draws: &ChainDraws, mut w: W) -> std::io::Result<()> {
    let n = draws.n_draws();
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| std::io::Error::other("dimension exceeds u32"))
    };
    w.write_all(DRAWS_MAGIC)?;
    w.write_all(&DRAWS_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(n)?.to_le_bytes())?;
    w.write_all(&to_u32(draws.n_params())?.to_le_bytes())?;
    let mut column = |values: &mut dyn Iterator<Item = f64>| -> std::io::Result<()> {
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    for c in 0..draws.beta.ncols() {
        column(&mut draws.beta.column(c).iter().copied())?;
    }
    for c in 0..draws.tau2.ncols() {
        column(&mut draws.tau2.column(c).iter().copied())?;
    }
    column(&mut draws.sigma2.iter().copied())?;
    column(&mut draws.pi0.iter().copied())?;
    w.flush()
}

/// Reads a dump written by [`write_draws`] as a `draws × params` matrix.
pub fn read_draws<R: Read>(mut r: R) -> std::io::Result<DMatrix<f64>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != DRAWS_MAGIC {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "bad magic",
        ));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    if word(4) as u32 != DRAWS_VERSION {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "unsupported version",
        ));
    }
    let (n, k) = (word(8), word(12));
    let mut out = DMatrix::zeros(n, k);
    let mut buf = [0u8; 8];
    for c in 0..k {
        for i in 0..n {
            r.read_exact(&mut buf)?;
            out[(i, c)] = f64::from_le_bytes(buf);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct GroupRow<'a> {
    group: usize,
    feature: &'a str,
    inclusion_prop: f64,
    selected: bool,
    medians: String,
}

/// Per-group CSV: `group,feature,inclusion_prop,selected,medians`, with the
/// medians `;`-separated.
pub fn write_summary_csv<W: Write>(
    summary: &ChainSummary,
    feature_names: &[String],
    writer: W,
) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (j, &f) in summary.group_features.iter().enumerate() {
        let medians = summary.group_medians[j]
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";");
        wtr.serialize(GroupRow {
            group: j,
            feature: feature_names.get(f).map_or("", String::as_str),
            inclusion_prop: summary.inclusion_prop[j],
            selected: summary.selected[j],
            medians,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Fitted values `X β̃` at the posterior medians.
pub fn fitted_at_medians(design: &DifferencedDesign, summary: &ChainSummary) -> DVector<f64> {
    let beta = DVector::from_iterator(
        design.x.ncols(),
        summary.group_medians.iter().flatten().copied(),
    );
    &design.x * beta
}
