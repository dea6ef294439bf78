//! Oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use blog::bglss::{run_gibbs_with_draws, GibbsConfig, SigmaPrior};
use blog::deltadesign::DifferencedDesign;
use blog::gprior::{nig_posterior, GPriorSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Random SPD matrix `A·Aᵀ + shift·I`.
pub fn random_spd(rng: &mut ChaCha8Rng, k: usize, shift: f64) -> DMatrix<f64> {
    let a = normal_matrix(rng, k, k);
    &a * a.transpose() + DMatrix::identity(k, k) * shift
}

/// Random 45 × 6 regression with moderate signal: `(X, y, β₀)`.
pub fn regression_instance(seed: u64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, 45, 6);
    let scale = r.random_range(0.3..3.0);
    let beta = normal_vector(&mut r, 6) * scale;
    let y = &x * beta + normal_vector(&mut r, 45);
    let beta0 = normal_vector(&mut r, 6) * 0.2;
    (x, y, beta0)
}

/// Log-spaced grid of 2000 points on `[0.01, 1000]`.
pub fn log_grid() -> Vec<f64> {
    let (lo, hi, m) = (0.01f64.ln(), 1000f64.ln(), 2000);
    (0..m)
        .map(|i| (lo + (hi - lo) * i as f64 / (m - 1) as f64).exp())
        .collect()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on
/// the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule on `[lo, hi]`.
pub fn composite_rule(lo: f64, hi: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = (hi - lo) / panels as f64;
    (0..panels)
        .flat_map(|p| {
            let mid = lo + (p as f64 + 0.5) * h;
            x.iter()
                .zip(&w)
                .map(move |(xi, wi)| (mid + 0.5 * h * xi, 0.5 * h * wi))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Unnormalised log posterior `ln p(y | β, σ²) + ln p(β | σ²) + ln p(σ²)`
/// of the conjugate normal-inverse-gamma model, written out term by term.
pub struct NigTarget {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta0: DVector<f64>,
    pub v0_inv: DMatrix<f64>,
    pub log_det_v0: f64,
    pub a: f64,
    pub b: f64,
}

impl NigTarget {
    pub fn log_joint(&self, beta: &[f64], sigma2: f64) -> f64 {
        let (n, k) = self.x.shape();
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut rss = 0.0;
        for i in 0..n {
            let mut fit = 0.0;
            for j in 0..k {
                fit += self.x[(i, j)] * beta[j];
            }
            rss += (self.y[i] - fit).powi(2);
        }
        let mut quad = 0.0;
        for i in 0..k {
            for j in 0..k {
                quad += (beta[i] - self.beta0[i]) * self.v0_inv[(i, j)] * (beta[j] - self.beta0[j]);
            }
        }
        let ls = sigma2.ln();
        let lik = -0.5 * n as f64 * (ln2pi + ls) - rss / (2.0 * sigma2);
        let prior_beta = -0.5 * k as f64 * (ln2pi + ls) - 0.5 * self.log_det_v0 - quad / (2.0 * sigma2);
        let prior_s2 = self.a * self.b.ln() - ln_gamma(self.a) - (self.a + 1.0) * ls - self.b / sigma2;
        lik + prior_beta + prior_s2
    }
}

/// Largest relative gap, over 20 points, between the closed-form
/// posterior density and likelihood × prior normalised by 3-D quadrature
/// over `(β₁, β₂, ln σ²)`. Instance: `n = 8`, `k = 2`, proper prior.
pub fn conjugacy_max_rel_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, k) = (8, 2);
    let x = normal_matrix(&mut r, n, k);
    let truth = DVector::from_vec(vec![1.0, -0.5]);
    let y = &x * &truth + normal_vector(&mut r, n) * 0.7;
    let v0 = random_spd(&mut r, k, 0.5);
    let beta0 = DVector::from_vec(vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]);
    let (a, b) = (3.0, 2.0);
    let spec = GPriorSpec {
        beta0: Some(beta0.clone()),
        a,
        b,
        ..GPriorSpec::default()
    };
    let post = nig_posterior(&x, &y, &spec, &v0).expect("posterior");

    let target = NigTarget {
        x: x.clone(),
        y: y.clone(),
        beta0: beta0.clone(),
        v0_inv: v0.clone().try_inverse().unwrap(),
        log_det_v0: v0.determinant().ln(),
        a,
        b,
    };

    // Integration box from an ordinary least-squares fit.
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let bhat = &xtx_inv * x.transpose() * &y;
    let s2hat = (&y - &x * &bhat).norm_squared() / (n - k) as f64;
    let s2ref = s2hat.max(b / (a + 1.0));
    let ranges: Vec<(f64, f64)> = (0..k)
        .map(|j| {
            let half = 16.0 * (s2ref * xtx_inv[(j, j)]).sqrt() + (beta0[j] - bhat[j]).abs();
            (bhat[j] - half, bhat[j] + half)
        })
        .collect();
    let (slo, shi) = (s2ref.ln() - 8.0, s2ref.ln() + 7.0);
    let b1 = composite_rule(ranges[0].0, ranges[0].1, 16, 8);
    let b2 = composite_rule(ranges[1].0, ranges[1].1, 16, 8);
    let ss = composite_rule(slo, shi, 24, 8);

    let shift = target.log_joint(post.beta_star.as_slice(), post.b_star / (post.a_star + 1.0));
    let mut z = 0.0;
    for &(s, ws) in &ss {
        let s2 = s.exp();
        let mut inner = 0.0;
        for &(u, wu) in &b1 {
            for &(v, wv) in &b2 {
                inner += wu * wv * (target.log_joint(&[u, v], s2) - shift).exp();
            }
        }
        z += ws * s2 * inner;
    }
    let ln_z = z.ln() + shift;

    let sd: Vec<f64> = (0..k)
        .map(|j| (post.v_star[(j, j)] * post.b_star / post.a_star).sqrt())
        .collect();
    let mode = post.b_star / (post.a_star + 1.0);
    (0..20)
        .map(|_| {
            let beta = DVector::from_fn(k, |j, _| post.beta_star[j] + sd[j] * r.random_range(-2.0..2.0));
            let s2 = mode * r.random_range(0.5..2.0);
            let numeric = target.log_joint(beta.as_slice(), s2) - ln_z;
            let closed = post.log_density(&beta, s2);
            ((numeric - closed).exp() - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Coverage of central 95% intervals over Geweke prior-predictive
/// replications, grouped by parameter family.
#[derive(Debug, Clone, Default)]
pub struct GewekeReport {
    pub repetitions: usize,
    pub beta: (usize, usize),
    pub tau2: (usize, usize),
    pub sigma2: (usize, usize),
    pub pi0: (usize, usize),
    /// Unselected groups whose medians were not bitwise `+0.0`.
    pub nonzero_unselected_medians: usize,
    pub unselected_groups: usize,
}

impl GewekeReport {
    pub fn rates(&self) -> [(&'static str, f64); 4] {
        let rate = |(hit, total): (usize, usize)| hit as f64 / total.max(1) as f64;
        [
            ("beta", rate(self.beta)),
            ("tau2", rate(self.tau2)),
            ("sigma2", rate(self.sigma2)),
            ("pi0", rate(self.pi0)),
        ]
    }
}

pub const GEWEKE_LAMBDA: f64 = 1.5;
pub const GEWEKE_SIGMA_SHAPE: f64 = 3.0;
pub const GEWEKE_SIGMA_RATE: f64 = 2.0;
pub const GEWEKE_PI0_A: f64 = 2.0;
pub const GEWEKE_PI0_B: f64 = 2.0;

/// Randomised probability-integral transform: ties with the truth (the
/// spike at zero) are split uniformly, so the event is calibrated for
/// mixed discrete/continuous posteriors too.
fn covered(draws: impl Iterator<Item = f64>, truth: f64, v: f64) -> bool {
    let (mut below, mut tied, mut total) = (0usize, 0usize, 0usize);
    for d in draws {
        total += 1;
        if d < truth {
            below += 1;
        } else if d == truth {
            tied += 1;
        }
    }
    let u = (below as f64 + v * tied as f64) / total as f64;
    (0.025..=0.975).contains(&u)
}

/// Draw parameters from the prior, data given parameters, then run the
/// full sampler and check interval coverage. Two groups of width two,
/// `n = 12`, `λ` fixed.
pub fn geweke(repetitions: usize, seed: u64) -> GewekeReport {
    let (n, m, groups) = (12, 2, 2);
    let mut report = GewekeReport {
        repetitions,
        ..GewekeReport::default()
    };
    for rep in 0..repetitions {
        let mut r = rng(seed.wrapping_mul(1_000_003).wrapping_add(rep as u64));
        let lambda2 = GEWEKE_LAMBDA * GEWEKE_LAMBDA;
        let sigma2 = 1.0
            / Gamma::new(GEWEKE_SIGMA_SHAPE, 1.0 / GEWEKE_SIGMA_RATE)
                .unwrap()
                .sample(&mut r);
        let pi0 = Beta::new(GEWEKE_PI0_A, GEWEKE_PI0_B).unwrap().sample(&mut r);
        let tau_prior = Gamma::new((m as f64 + 1.0) / 2.0, 2.0 / lambda2).unwrap();
        let tau2: Vec<f64> = (0..groups).map(|_| tau_prior.sample(&mut r)).collect();
        let mut beta = vec![0.0; m * groups];
        for g in 0..groups {
            if r.random::<f64>() >= pi0 {
                for c in 0..m {
                    let z: f64 = r.sample(StandardNormal);
                    beta[g * m + c] = (sigma2 * tau2[g]).sqrt() * z;
                }
            }
        }
        let x = normal_matrix(&mut r, n, m * groups);
        let y = &x * DVector::from_column_slice(&beta) + normal_vector(&mut r, n) * sigma2.sqrt();
        let design = DifferencedDesign {
            y,
            x,
            block_sizes: vec![m; groups],
            feature_index: (0..groups).collect(),
            n_subjects: n,
            n_times: 2,
        };
        let config = GibbsConfig {
            n_iter: 3_000,
            burn_in: 500,
            seed: seed ^ (rep as u64).wrapping_mul(0x9E37_79B9),
            pi0_beta_a: GEWEKE_PI0_A,
            pi0_beta_b: GEWEKE_PI0_B,
            lambda_init: GEWEKE_LAMBDA,
            mcem_rounds: 0,
            mcem_inner_iters: 1,
            standardize: false,
            sigma2_prior: SigmaPrior::InverseGamma {
                shape: GEWEKE_SIGMA_SHAPE,
                rate: GEWEKE_SIGMA_RATE,
            },
        };
        let (summary, draws) = run_gibbs_with_draws(&design, &config).expect("sampler run");

        let tally = |slot: &mut (usize, usize), hit: bool| {
            slot.1 += 1;
            if hit {
                slot.0 += 1;
            }
        };
        for c in 0..m * groups {
            let v = r.random();
            tally(&mut report.beta, covered(draws.beta.column(c).iter().copied(), beta[c], v));
        }
        for g in 0..groups {
            let v = r.random();
            tally(&mut report.tau2, covered(draws.tau2.column(g).iter().copied(), tau2[g], v));
        }
        let v = r.random();
        tally(&mut report.sigma2, covered(draws.sigma2.iter().copied(), sigma2, v));
        let v = r.random();
        tally(&mut report.pi0, covered(draws.pi0.iter().copied(), pi0, v));

        for (g, &sel) in summary.selected.iter().enumerate() {
            if !sel {
                report.unselected_groups += 1;
                if summary.group_medians[g].iter().any(|v| v.to_bits() != 0) {
                    report.nonzero_unselected_medians += 1;
                }
            }
        }
    }
    report
}
