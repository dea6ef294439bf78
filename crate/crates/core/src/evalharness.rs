//! Replicated simulation studies and FPR/TPR bookkeeping.
//!
//! Replicate `r` of a study simulates from `(seed, r)` and, for the
//! multivariate study, seeds its sampler with `derive_seed(seed, r)`, so
//! results are independent of how the work pool schedules replicates.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bayesfactor::{decisive_threshold, univariate_screen, BayesFactorReport};
use crate::bglss::{run_gibbs, GibbsConfig};
use crate::deltadesign::build_multivariate_design;
use crate::gprior::GPriorSpec;
use crate::rng::derive_seed;
use crate::simgen::{simulate_replicate, SimScenario, SimTruth};

/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error("a study needs at least one replicate")]
    NoReplicates,
    #[error("threshold grid must be nonempty and ascending")]
    BadThresholds,
    #[error("{failed} of {total} replicates failed; first: replicate {first_index}: {first_error}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first_index: usize,
        first_error: String,
    },
}

/// Default grid of `2 ln BF` cutoffs: evidence-scale cutpoints plus the
/// decisive rule.
pub fn default_thresholds() -> Vec<f64> {
    vec![0.0, 2.0, 6.0, 10.0, decisive_threshold()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl Confusion {
    pub fn new(selected: &BTreeSet<usize>, truth: &SimTruth) -> Self {
        let tp = selected.iter().filter(|&&f| truth.is_target(f)).count();
        let fp = selected
            .iter()
            .filter(|&&f| f < truth.n_features() && !truth.is_target(f))
            .count();
        Self {
            true_positives: tp,
            false_positives: fp,
            true_negatives: truth.n_noise() - fp,
            false_negatives: truth.n_targets() - tp,
        }
    }

    /// `FP / (FP + TN)`, 0 without noise features.
    pub fn fpr(&self) -> f64 {
        ratio(self.false_positives, self.false_positives + self.true_negatives)
    }

    /// `TP / (TP + FN)`, 0 without targets.
    pub fn tpr(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_negatives)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionOutcome {
    pub replicate: usize,
    pub selected: BTreeSet<usize>,
    pub truth: SimTruth,
    pub fpr: f64,
    pub tpr: f64,
    /// Univariate studies only: FPR/TPR over the threshold grid.
    pub threshold_curve: Vec<ThresholdPoint>,
}

impl SelectionOutcome {
    pub fn new(replicate: usize, selected: BTreeSet<usize>, truth: SimTruth) -> Self {
        let c = Confusion::new(&selected, &truth);
        Self {
            replicate,
            selected,
            truth,
            fpr: c.fpr(),
            tpr: c.tpr(),
            threshold_curve: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StudyKind {
    Univariate,
    Multivariate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub kind: StudyKind,
    pub scenario: SimScenario,
    pub replicates: usize,
    /// Successful replicates, by replicate index.
    pub per_replicate: Vec<SelectionOutcome>,
    pub failures: Vec<ReplicateFailure>,
    pub mean_fpr: f64,
    pub mean_tpr: f64,
    /// Mean FPR/TPR per `2 ln BF` cutoff (univariate studies).
    pub threshold_curve: Vec<ThresholdPoint>,
    /// How many replicates selected each target, in target order.
    pub target_selection_counts: Vec<usize>,
}

impl StudyResult {
    /// Replicates in which every target was selected.
    pub fn all_targets_selected_count(&self) -> usize {
        self.per_replicate
            .iter()
            .filter(|o| o.truth.target_indices.iter().all(|t| o.selected.contains(t)))
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study results serialise")
    }
}

/// FPR/TPR of `{two_log_bf > cutoff}` for each cutoff.
pub fn bf_threshold_sweep(
    reports: &[BayesFactorReport],
    truth: &SimTruth,
    thresholds: &[f64],
) -> Vec<ThresholdPoint> {
    thresholds
        .iter()
        .map(|&threshold| {
            let selected: BTreeSet<usize> = reports
                .iter()
                .filter(|r| r.two_log_bf > threshold)
                .map(|r| r.feature_index)
                .collect();
            let c = Confusion::new(&selected, truth);
            ThresholdPoint {
                threshold,
                fpr: c.fpr(),
                tpr: c.tpr(),
            }
        })
        .collect()
}

fn check_thresholds(thresholds: &[f64]) -> Result<(), StudyError> {
    if thresholds.is_empty() || thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(StudyError::BadThresholds);
    }
    Ok(())
}

/// Univariate Bayes-factor screen on each replicate; a feature is selected
/// when it is decisive.
pub fn run_univariate_study(
    scenario: &SimScenario,
    spec: &GPriorSpec,
    replicates: usize,
    thresholds: &[f64],
) -> Result<StudyResult, StudyError> {
    check_thresholds(thresholds)?;
    let results = run_replicates(replicates, |r| {
        let (ds, truth) = simulate_replicate(scenario, r as u64).map_err(|e| e.to_string())?;
        let screen = univariate_screen(&ds, spec).map_err(|e| e.to_string())?;
        let selected = screen.decisive_features().into_iter().collect();
        let mut outcome = SelectionOutcome::new(r, selected, truth);
        outcome.threshold_curve = bf_threshold_sweep(&screen.reports, &outcome.truth, thresholds);
        Ok(outcome)
    })?;
    Ok(aggregate(StudyKind::Univariate, scenario, replicates, results, thresholds))
}

/// Spike-and-slab group lasso on each replicate's joint design; a feature
/// is selected when its group's posterior median is nonzero.
pub fn run_multivariate_study(
    scenario: &SimScenario,
    config: &GibbsConfig,
    replicates: usize,
) -> Result<StudyResult, StudyError> {
    let results = run_replicates(replicates, |r| {
        let (ds, truth) = simulate_replicate(scenario, r as u64).map_err(|e| e.to_string())?;
        let design = build_multivariate_design(&ds).map_err(|e| e.to_string())?;
        let cfg = GibbsConfig {
            seed: derive_seed(config.seed ^ scenario.seed, r as u64),
            ..config.clone()
        };
        let summary = run_gibbs(&design, &cfg).map_err(|e| e.to_string())?;
        let selected = summary.selected_features().into_iter().collect();
        Ok(SelectionOutcome::new(r, selected, truth))
    })?;
    Ok(aggregate(StudyKind::Multivariate, scenario, replicates, results, &[]))
}

type ReplicateResult = Result<SelectionOutcome, String>;

fn run_replicates<F>(replicates: usize, job: F) -> Result<Vec<ReplicateResult>, StudyError>
where
    F: Fn(usize) -> ReplicateResult + Sync,
{
    if replicates == 0 {
        return Err(StudyError::NoReplicates);
    }
    let results: Vec<ReplicateResult> = (0..replicates).into_par_iter().map(&job).collect();
    let failed: Vec<(usize, &String)> = results
        .iter()
        .enumerate()
        .filter_map(|(r, res)| res.as_ref().err().map(|e| (r, e)))
        .collect();
    for (r, e) in &failed {
        log::warn!("replicate {r} failed: {e}");
    }
    if failed.len() as f64 > MAX_FAILURE_FRACTION * replicates as f64 {
        let (first_index, first_error) = failed[0];
        return Err(StudyError::TooManyFailures {
            failed: failed.len(),
            total: replicates,
            first_index,
            first_error: first_error.clone(),
        });
    }
    Ok(results)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn aggregate(
    kind: StudyKind,
    scenario: &SimScenario,
    replicates: usize,
    results: Vec<ReplicateResult>,
    thresholds: &[f64],
) -> StudyResult {
    let mut per_replicate = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => per_replicate.push(o),
            Err(error) => failures.push(ReplicateFailure { replicate: r, error }),
        }
    }
    let threshold_curve = thresholds
        .iter()
        .enumerate()
        .map(|(i, &threshold)| ThresholdPoint {
            threshold,
            fpr: mean(per_replicate.iter().map(|o| o.threshold_curve[i].fpr)),
            tpr: mean(per_replicate.iter().map(|o| o.threshold_curve[i].tpr)),
        })
        .collect();
    let target_selection_counts = (0..scenario.n_targets)
        .map(|t| per_replicate.iter().filter(|o| o.selected.contains(&t)).count())
        .collect();
    StudyResult {
        kind,
        scenario: scenario.clone(),
        replicates,
        mean_fpr: mean(per_replicate.iter().map(|o| o.fpr)),
        mean_tpr: mean(per_replicate.iter().map(|o| o.tpr)),
        per_replicate,
        failures,
        threshold_curve,
        target_selection_counts,
    }
}

/// Recomputes the summary means from `per_replicate`, in the given order.
pub fn recompute_means(outcomes: &[SelectionOutcome]) -> (f64, f64) {
    (
        mean(outcomes.iter().map(|o| o.fpr)),
        mean(outcomes.iter().map(|o| o.tpr)),
    )
}

/// Configures the global rayon pool from `BLOG_THREADS`, if set. Returns the
/// requested thread count.
pub fn init_thread_pool_from_env() -> Option<usize> {
    let threads = std::env::var("BLOG_THREADS").ok()?.trim().parse::<usize>().ok()?;
    if threads == 0 {
        return None;
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        log::warn!("could not size the thread pool: {e}");
    }
    Some(threads)
}
