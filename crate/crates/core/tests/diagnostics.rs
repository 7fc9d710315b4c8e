mod common;

use mvop_core::da::{run_da, DaConfig, PosteriorDraws};
use mvop_core::diagnostics::*;
use mvop_core::rng::rng_from_seed;
use mvop_core::stats::chi_square_uniformity_pvalue;
use mvop_core::MvopError;
use proptest::prelude::*;
use rand::seq::SliceRandom;

#[test]
fn ppp_formula_edges() {
    let same = vec![(1.0, 1.0); 100];
    assert_eq!(two_sided_ppp(&same), 0.0);
    let pairs: Vec<(f64, f64)> = (0..100).map(|i| (0.0, if i < 30 { 1.0 } else { -1.0 })).collect();
    assert!((two_sided_ppp(&pairs) - 0.6).abs() < 1e-15);
}

proptest! {
    #[test]
    fn ppp_in_unit_interval_and_permutation_invariant(v in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..200), seed in 0u64..1000) {
        let p = two_sided_ppp(&v);
        prop_assert!((0.0..=1.0).contains(&p));
        let mut w = v.clone();
        w.shuffle(&mut rng_from_seed(seed));
        prop_assert_eq!(p, two_sided_ppp(&w));
    }
}

fn toy_draws(s: usize, seed: u64) -> (mvop_core::OrdinalDataset, PosteriorDraws) {
    let truth = common::three_item_truth();
    let data = common::simulate(&truth, common::design(200, seed), seed + 1);
    let y = data.to_complete().unwrap();
    let draws = PosteriorDraws {
        chain: 0,
        iterations: (1..=s).collect(),
        params: vec![truth.clone(); s],
        imputations: vec![y; s],
        imputation_iterations: (1..=s).collect(),
        imputation_params: vec![truth; s],
        gamma_skips: 0,
    };
    (data, draws)
}

#[test]
fn ppc_requires_enough_draws() {
    let (data, draws) = toy_draws(50, 1);
    assert!(matches!(
        ppc(&data, &draws, &[Statistic::T1], 1),
        Err(MvopError::Domain(_))
    ));
}

#[test]
fn ppc_shapes_and_determinism() {
    let (data, draws) = toy_draws(100, 2);
    let all = [Statistic::T1, Statistic::T2, Statistic::T3];
    let report = ppc(&data, &draws, &all, 5).unwrap();
    assert_eq!(report.of(Statistic::T1).count(), 1);
    assert_eq!(report.of(Statistic::T2).count(), 4 + 5 + 4);
    assert_eq!(report.of(Statistic::T3).count(), 3);
    assert!(report
        .results
        .iter()
        .all(|r| r.pairs.len() == 100 && (0.0..=1.0).contains(&r.ppp)));
    assert_eq!(report, ppc(&data, &draws, &all, 5).unwrap());
    let s = report.summary(Statistic::T2).unwrap();
    assert_eq!(s.histogram.iter().sum::<usize>(), 13);
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 17);
}

#[test]
fn observed_rank_among_replicates_is_uniform_under_the_true_model() {
    // With the true parameters as the "posterior", T_D and the T_R are iid.
    let mut counts = [0usize; 10];
    let mut tie = rng_from_seed(99);
    for rep in 0..200u64 {
        let (data, draws) = toy_draws(100, 1000 + rep);
        let report = ppc(&data, &draws, &[Statistic::T3], rep).unwrap();
        let r = report.of(Statistic::T3).next().unwrap();
        let below = r.pairs.iter().filter(|(d, t)| t < d).count();
        let ties = r.pairs.iter().filter(|(d, t)| t == d).count();
        let rank = below + tie.random_range(0..=ties);
        counts[(rank * 10 / 101).min(9)] += 1;
    }
    let p = chi_square_uniformity_pvalue(&counts);
    assert!(p > 0.01, "{counts:?} p = {p}");
}

#[test]
fn ppc_on_fitted_self_generated_model() {
    let truth = common::three_item_truth();
    let data = common::simulate(&truth, common::design(300, 4), 5);
    let cfg = DaConfig {
        iterations: 2200,
        burn_in: Some(200),
        imputations: 100,
        seed: 6,
        ..DaConfig::default()
    };
    let draws = run_da(&data, &cfg).unwrap().swap_remove(0);
    let report = ppc(&data, &draws, &[Statistic::T1, Statistic::T2, Statistic::T3], 7).unwrap();
    for s in [Statistic::T2, Statistic::T3] {
        let sum = report.summary(s).unwrap();
        assert_eq!(sum.below_005, 0, "{sum:?}");
    }
}

#[test]
fn holdout_rejects_degenerate_fractions() {
    let data = common::simulate(&common::three_item_truth(), common::design(50, 1), 2);
    for f in [1.0, 0.0, 1.5] {
        let cfg = HoldoutConfig {
            train_fraction: f,
            target_items: vec![2],
            ..HoldoutConfig::default()
        };
        assert!(matches!(holdout_check(&data, &cfg), Err(MvopError::Domain(_))));
    }
}

#[test]
fn holdout_splits_are_seeded() {
    let a = holdout_split(100, 0.9, 3).unwrap();
    assert_eq!(a, holdout_split(100, 0.9, 3).unwrap());
    assert_ne!(a, holdout_split(100, 0.9, 4).unwrap());
    assert_eq!((a.0.len(), a.1.len()), (90, 10));
    let mut all: Vec<usize> = a.0.iter().chain(&a.1).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
}

#[test]
fn holdout_on_model_generated_data() {
    let data = common::simulate(&common::three_item_truth(), common::design(600, 8), 9);
    let cfg = HoldoutConfig {
        target_items: vec![1, 2],
        da: DaConfig {
            iterations: 1500,
            burn_in: Some(500),
            imputations: 20,
            seed: 0,
            ..DaConfig::default()
        },
        seed: 10,
        ..HoldoutConfig::default()
    };
    let reps = holdout_check(&data, &cfg).unwrap();
    assert_eq!(reps.len(), 10);
    let within = reps.iter().filter(|r| r.delta.abs() <= 2.0 * r.predicted_q1_se).count();
    assert!(
        within >= 9,
        "{:?}",
        reps.iter().map(|r| (r.delta, r.predicted_q1_se)).collect::<Vec<_>>()
    );
    assert!(reps.iter().all(|r| r.n_test == 60 && r.gamma.len() == 1));
}
