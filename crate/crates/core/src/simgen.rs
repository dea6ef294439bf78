//! Simulated longitudinal panels with known targets.
//!
//! Per replicate, each feature `j` gets a baseline mean `μ_j ~ U(10, 20)`, a
//! standard deviation `σ_j ~ U(1, 2)` and, for targets, a jump `dμ_j`. Then,
//! per subject:
//!
//! ```text
//! x₁ ~ N(μ, diag σ)          x₂ = x₁ + N(dμ, diag σ)       x_t = x_{t−1} + N(0, diag σ)
//! y₁ ~ N(15, 5)              y_t ~ N(y_{t−1} + Σ_{s=2..t} βᵀ(x_s − x_{s−1}), 5)
//! ```
//!
//! with `β = (β_target, …, β_target, 0, …, 0)`. Every second parameter is a
//! standard deviation. Targets are the first `n_targets` features.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::longdata::{save_long_csv, DataError, LongitudinalDataset};
use crate::rng::{stream_rng, Stream};

const Y_INITIAL_MEAN: f64 = 15.0;
const Y_SD: f64 = 5.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// How target jumps `dμ_j` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum JumpRule {
    /// One `U(5, 10)` draw per target and replicate.
    #[default]
    Uniform,
    /// Evenly spaced from 5 to 10 across the targets.
    Ramp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n_targets: usize,
    pub n_noise: usize,
    pub n_subjects: usize,
    pub n_times: usize,
    pub beta_target: f64,
    pub seed: u64,
    pub jump: JumpRule,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            n_targets: 0,
            n_noise: 1,
            n_subjects: 15,
            n_times: 4,
            beta_target: 1.0 / 3.0,
            seed: 0,
            jump: JumpRule::Uniform,
        }
    }
}

impl SimScenario {
    pub fn new(n_targets: usize, n_noise: usize, seed: u64) -> Self {
        Self {
            n_targets,
            n_noise,
            seed,
            ..Self::default()
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_targets + self.n_noise
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_features() == 0 {
            return Err(SimError::InvalidScenario("no features".into()));
        }
        if self.n_subjects == 0 || self.n_times == 0 {
            return Err(SimError::InvalidScenario(
                "need at least one subject and one time point".into(),
            ));
        }
        if !self.beta_target.is_finite() {
            return Err(SimError::InvalidScenario("beta_target is not finite".into()));
        }
        Ok(())
    }
}

/// The three standard scenarios: 10/20, 20/80 and 50/300 targets/noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    S30,
    S100,
    S350,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::S30, Preset::S100, Preset::S350];

    pub fn scenario(self, seed: u64) -> SimScenario {
        let (targets, noise) = match self {
            Preset::S30 => (10, 20),
            Preset::S100 => (20, 80),
            Preset::S350 => (50, 300),
        };
        SimScenario::new(targets, noise, seed)
    }
}

/// Scenario for a named preset.
pub fn preset(name: Preset, seed: u64) -> SimScenario {
    name.scenario(seed)
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::S30 => "s30",
            Preset::S100 => "s100",
            Preset::S350 => "s350",
        })
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s30" => Ok(Preset::S30),
            "s100" => Ok(Preset::S100),
            "s350" => Ok(Preset::S350),
            other => Err(format!("unknown preset `{other}` (expected s30, s100 or s350)")),
        }
    }
}

/// Ground truth of one simulated replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub target_indices: Vec<usize>,
    pub beta: Vec<f64>,
    /// Per-feature jump between the first two time points.
    pub jumps: Vec<f64>,
}

impl SimTruth {
    pub fn n_features(&self) -> usize {
        self.beta.len()
    }

    pub fn is_target(&self, feature: usize) -> bool {
        self.target_indices.binary_search(&feature).is_ok()
    }

    pub fn n_targets(&self) -> usize {
        self.target_indices.len()
    }

    pub fn n_noise(&self) -> usize {
        self.n_features() - self.n_targets()
    }
}

/// Replicate 0 of `scenario`.
pub fn simulate(scenario: &SimScenario) -> Result<(LongitudinalDataset, SimTruth), SimError> {
    simulate_replicate(scenario, 0)
}

/// Replicate `replicate` of `scenario`; independent of every other replicate.
pub fn simulate_replicate(
    scenario: &SimScenario,
    replicate: u64,
) -> Result<(LongitudinalDataset, SimTruth), SimError> {
    scenario.validate()?;
    let (n, t, p, k) = (
        scenario.n_subjects,
        scenario.n_times,
        scenario.n_features(),
        scenario.n_targets,
    );

    let mut prng = stream_rng(scenario.seed, replicate, Stream::FeatureParams);
    let mu: Vec<f64> = (0..p).map(|_| prng.random_range(10.0..20.0)).collect();
    let sd: Vec<f64> = (0..p).map(|_| prng.random_range(1.0..2.0)).collect();
    let jumps: Vec<f64> = (0..p)
        .map(|j| match (j < k, scenario.jump) {
            (false, _) => 0.0,
            (true, JumpRule::Uniform) => prng.random_range(5.0..10.0),
            (true, JumpRule::Ramp) if k == 1 => 7.5,
            (true, JumpRule::Ramp) => 5.0 + 5.0 * j as f64 / (k - 1) as f64,
        })
        .collect();
    let beta: Vec<f64> = (0..p)
        .map(|j| if j < k { scenario.beta_target } else { 0.0 })
        .collect();

    let mut xrng = stream_rng(scenario.seed, replicate, Stream::Features);
    let features: Vec<DMatrix<f64>> = (0..p)
        .map(|j| {
            let mut m = DMatrix::zeros(n, t);
            for i in 0..n {
                let z: f64 = StandardNormal.sample(&mut xrng);
                m[(i, 0)] = mu[j] + sd[j] * z;
                for s in 1..t {
                    let z: f64 = StandardNormal.sample(&mut xrng);
                    let drift = if s == 1 { jumps[j] } else { 0.0 };
                    m[(i, s)] = m[(i, s - 1)] + drift + sd[j] * z;
                }
            }
            m
        })
        .collect();

    let mut yrng = stream_rng(scenario.seed, replicate, Stream::Response);
    let noise = Normal::new(0.0, Y_SD).expect("positive sd");
    let mut y = DMatrix::zeros(n, t);
    for i in 0..n {
        y[(i, 0)] = Y_INITIAL_MEAN + noise.sample(&mut yrng);
        // βᵀ(x_s − x_{s−1}) accumulated over s = 2..t
        let mut signal = 0.0;
        for s in 1..t {
            signal += (0..k)
                .map(|j| beta[j] * (features[j][(i, s)] - features[j][(i, s - 1)]))
                .sum::<f64>();
            y[(i, s)] = y[(i, s - 1)] + signal + noise.sample(&mut yrng);
        }
    }

    let width = (n.max(1) as f64).log10().floor() as usize + 1;
    let subject_ids = (1..=n).map(|i| format!("S{i:0w$}", w = width.max(2))).collect();
    let fwidth = (p as f64).log10().floor() as usize + 1;
    let names = (1..=p).map(|j| format!("X{j:0w$}", w = fwidth.max(2))).collect();
    let dataset = LongitudinalDataset::new(subject_ids, names, y, features)?;
    Ok((
        dataset,
        SimTruth {
            target_indices: (0..k).collect(),
            beta,
            jumps,
        },
    ))
}

/// Writes the truth sidecar: `feature,is_target`.
pub fn write_truth_csv<W: Write>(
    truth: &SimTruth,
    feature_names: &[String],
    writer: W,
) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["feature", "is_target"])?;
    for (j, name) in feature_names.iter().enumerate() {
        wtr.write_record([name.as_str(), if truth.is_target(j) { "1" } else { "0" }])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Exports `data.csv` and `truth.csv` into `dir`, returning both paths.
pub fn export_replicate(
    dataset: &LongitudinalDataset,
    truth: &SimTruth,
    dir: &Path,
) -> Result<(std::path::PathBuf, std::path::PathBuf), SimError> {
    std::fs::create_dir_all(dir)?;
    let data = dir.join("data.csv");
    let truth_path = dir.join("truth.csv");
    save_long_csv(dataset, &data, &Default::default())?;
    let file = std::io::BufWriter::new(std::fs::File::create(&truth_path)?);
    write_truth_csv(truth, dataset.feature_names(), file).map_err(DataError::from)?;
    Ok((data, truth_path))
}
