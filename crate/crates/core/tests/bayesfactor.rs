mod common;

use approx::assert_relative_eq;
use blog::bayesfactor::{
    classify_bf, decisive_threshold, gbf_screen, is_decisive, maruyama_george_gbf, null_based_bf,
    univariate_screen, write_reports_csv, BayesFactorError, Evidence, GbfBranch,
};
use blog::deltadesign::build_multivariate_design;
use blog::gprior::{GPriorSpec, GRule};
use blog::longdata::LongitudinalDataset;
use blog::simgen::{simulate, simulate_replicate, Preset, SimScenario};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

// High-precision references from tests/oracles/bayes_factor_oracle.py.
const NULL_BF_PERFECT_FIT: f64 = 30.090485513366013472;
const NULL_BF_R2_037: f64 = 2.9101792622207023128;
const GBF_INTEGER_DESIGN: f64 = 1.1419375851503387623;

/// Deterministic integer-valued 45 × 6 design, mirrored in the oracle script.
fn integer_design() -> (DMatrix<f64>, DVector<f64>) {
    let (n, q) = (45usize, 6usize);
    let x = DMatrix::from_fn(n, q, |i, j| {
        (((i + 1) * (j + 2) * 7 + 3 * j * j + i * i) % 11) as f64 - 5.0
    });
    let y = DVector::from_fn(n, |i, _| ((3 * i * i + 5 * i) % 13) as f64 - 6.0 + (i % 4) as f64);
    (x, y)
}

#[test]
fn perfect_fit_bayes_factor_matches_high_precision_value() {
    let lbf = null_based_bf(1.0, 3.873, 45, 6).unwrap();
    assert_relative_eq!(lbf, NULL_BF_PERFECT_FIT, max_relative = 1e-13);
    assert_relative_eq!(lbf, 19.0 * 4.873f64.ln(), max_relative = 1e-14);
    assert_relative_eq!(lbf.exp(), 1.17e13, max_relative = 5e-3);
    let lbf = null_based_bf(0.37, 15f64.sqrt(), 45, 6).unwrap();
    assert_relative_eq!(lbf, NULL_BF_R2_037, max_relative = 1e-13);
}

#[test]
fn zero_r2_collapses_for_several_g() {
    for g in [0.1, 1.0, 10.0, 15f64.sqrt()] {
        let bf = null_based_bf(0.0, g, 45, 6).unwrap().exp();
        let expected = (1.0 + g).powf(-3.0);
        assert!(((bf - expected) / expected).abs() <= 1e-12, "g = {g}");
        assert!(bf < 1.0);
    }
}

#[test]
fn log_bf_increases_with_r2() {
    let values: Vec<f64> = (0..10)
        .map(|i| null_based_bf(i as f64 / 10.0, 15f64.sqrt(), 45, 6).unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn invalid_inputs() {
    assert_eq!(null_based_bf(1.5, 1.0, 45, 6), Err(BayesFactorError::InvalidR2(1.5)));
    assert_eq!(null_based_bf(0.5, 0.0, 45, 6), Err(BayesFactorError::NonPositiveG(0.0)));
    assert_eq!(
        null_based_bf(0.5, 1.0, 7, 6),
        Err(BayesFactorError::DegenerateDf { n: 7, p: 6 })
    );
}

#[test]
fn evidence_classes() {
    assert_eq!(classify_bf(7.0), Evidence::Strong);
    let v = 2.0 * 151f64.ln();
    assert_eq!(classify_bf(v), Evidence::VeryStrong);
    assert!(is_decisive(v));
    assert_eq!(classify_bf(0.0), Evidence::BareMention);
    assert!(!is_decisive(0.0));
    assert_eq!(classify_bf(2.0), Evidence::Positive);
    assert_eq!(classify_bf(10.0), Evidence::VeryStrong);
    // 2 ln 149 is very strong on the evidence scale but not decisive
    assert!(!is_decisive(2.0 * 149f64.ln()));
    assert_relative_eq!(decisive_threshold(), 2.0 * 150f64.ln());
}

#[test]
fn gbf_full_rank_branch_matches_high_precision_value() {
    let (x, y) = integer_design();
    let r = maruyama_george_gbf(&x, &y).unwrap();
    assert_eq!(r.branch, GbfBranch::FullRank);
    assert_relative_eq!(r.log_gbf, GBF_INTEGER_DESIGN, max_relative = 1e-8);
    // invariant to the scale of y
    let r2 = maruyama_george_gbf(&x, &(y * 37.5)).unwrap();
    assert_relative_eq!(r2.log_gbf, r.log_gbf, max_relative = 1e-10);
}

#[test]
fn gbf_minimum_norm_branch_with_unit_product_is_zero() {
    let x = DMatrix::identity(3, 3) * 2.0;
    let y = DVector::from_vec(vec![0.3, -1.0, 2.0]);
    let r = maruyama_george_gbf(&x, &y).unwrap();
    assert_eq!(r.branch, GbfBranch::MinimumNorm);
    assert!(r.log_gbf.abs() < 1e-14);
}

#[test]
fn gbf_on_wide_simulated_design_is_finite() {
    let (ds, _) = simulate(&Preset::S100.scenario(7)).unwrap();
    let d = build_multivariate_design(&ds).unwrap();
    assert_eq!(d.x.shape(), (45, 600));
    let r = maruyama_george_gbf(&d.x, &d.y).unwrap();
    assert_eq!(r.branch, GbfBranch::MinimumNorm);
    assert!(r.log_gbf.is_finite());
}

#[test]
fn gbf_screen_covers_every_feature() {
    let (ds, _) = simulate(&Preset::S30.scenario(2)).unwrap();
    let s = gbf_screen(&ds).unwrap();
    assert_eq!(s.features.len(), 30);
    assert!(s.features.iter().all(|f| f.log_gbf.is_some_and(f64::is_finite)));
    assert_eq!(s.joint.unwrap().branch, GbfBranch::MinimumNorm);
}

#[test]
fn all_targets_decisive_on_s100() {
    let (ds, truth) = simulate(&Preset::S100.scenario(1)).unwrap();
    let screen = univariate_screen(&ds, &GPriorSpec::default()).unwrap();
    let decisive = screen.decisive_features();
    for t in &truth.target_indices {
        assert!(decisive.contains(t), "target {t} not decisive");
    }
}

#[test]
fn constant_feature_is_skipped_and_ranks_are_a_permutation() {
    let (ds, _) = simulate(&SimScenario::new(3, 4, 8)).unwrap();
    let mut features: Vec<DMatrix<f64>> = (0..ds.n_features()).map(|j| ds.feature(j).clone()).collect();
    features[2] = DMatrix::from_element(ds.n_subjects(), ds.n_times(), 7.0);
    let ds = LongitudinalDataset::new(
        ds.subject_ids().to_vec(),
        ds.feature_names().to_vec(),
        ds.responses().clone(),
        features,
    )
    .unwrap();
    let screen = univariate_screen(&ds, &GPriorSpec::default()).unwrap();
    assert_eq!(screen.skipped.len(), 1);
    assert_eq!(screen.skipped[0].feature_index, 2);
    assert_eq!(screen.reports.len(), 6);
    let mut ranks: Vec<usize> = screen.reports.iter().map(|r| r.rank).collect();
    ranks.sort_unstable();
    assert_eq!(ranks, (1..=6).collect::<Vec<_>>());
    assert!(screen.reports.windows(2).all(|w| w[0].two_log_bf >= w[1].two_log_bf));
    for r in &screen.reports {
        assert_eq!(r.evidence, classify_bf(r.two_log_bf));
    }
}

#[test]
fn both_g_rules_usually_agree_on_the_decisive_set() {
    let sc = Preset::S100.scenario(2024);
    let agree = (0..100u64)
        .filter(|&r| {
            let (ds, _) = simulate_replicate(&sc, r).unwrap();
            let a = univariate_screen(&ds, &GPriorSpec::with_rule(GRule::SqrtN)).unwrap();
            let b = univariate_screen(&ds, &GPriorSpec::with_rule(GRule::SureMin)).unwrap();
            a.decisive_features() == b.decisive_features()
        })
        .count();
    assert!(agree >= 90, "decisive sets agree in {agree}/100 replicates");
}

#[test]
fn screen_output_is_byte_identical_across_runs() {
    let (ds, _) = simulate(&Preset::S100.scenario(5)).unwrap();
    let render = || {
        let s = univariate_screen(&ds, &GPriorSpec::with_rule(GRule::SureMin)).unwrap();
        let mut buf = Vec::new();
        write_reports_csv(&s.reports, &mut buf).unwrap();
        buf
    };
    let first = render();
    assert_eq!(first, render());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("rank,feature,two_log_bf,bf_display,evidence,decisive,g_used,r_squared\n"));
}

fn scaled(ds: &LongitudinalDataset, c: f64) -> LongitudinalDataset {
    LongitudinalDataset::new(
        ds.subject_ids().to_vec(),
        ds.feature_names().to_vec(),
        ds.responses() * c,
        (0..ds.n_features()).map(|j| ds.feature(j).clone()).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn log_bf_is_invariant_to_response_scale(seed in 0u64..1000, c in 0.001..1000.0f64, sure in any::<bool>()) {
        let (ds, _) = simulate(&SimScenario::new(2, 3, seed)).unwrap();
        let rule = if sure { GRule::SureMin } else { GRule::Fixed(3.0) };
        let spec = GPriorSpec::with_rule(rule);
        let a = univariate_screen(&ds, &spec).unwrap();
        let b = univariate_screen(&scaled(&ds, c), &spec).unwrap();
        let key = |s: &blog::ScreenResult| {
            let mut v: Vec<(usize, f64, f64)> = s.reports.iter().map(|r| (r.feature_index, r.log_bf, r.g_used)).collect();
            v.sort_by_key(|t| t.0);
            v
        };
        for ((fa, la, ga), (fb, lb, gb)) in key(&a).into_iter().zip(key(&b)) {
            prop_assert_eq!(fa, fb);
            prop_assert!((la - lb).abs() <= 1e-10 * la.abs().max(1.0), "{} vs {}", la, lb);
            prop_assert!((ga - gb).abs() <= 1e-9 * ga.max(1.0));
        }
    }

    #[test]
    fn classification_is_monotone(a in -50.0..50.0f64, b in -50.0..50.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(classify_bf(lo) <= classify_bf(hi));
        prop_assert!(!is_decisive(lo) || is_decisive(hi));
    }
}
