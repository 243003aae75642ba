mod common;

use hbsimex::measurement::{bootstrap_replicates, contaminate};
use hbsimex::{estimate_error_variance, ReplicateSet, ResidualPool};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use common::rng;

/// One-way ANOVA within-group mean square by the two-pass route
/// `(SS_total - SS_between) / (N - groups)`.
fn anova_within_mean_square(groups: &[Vec<f64>]) -> f64 {
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let ss_total: f64 = groups.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_between: f64 = groups
        .iter()
        .map(|g| {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            g.len() as f64 * (m - grand).powi(2)
        })
        .sum();
    (ss_total - ss_between) / (n - groups.len()) as f64
}

fn instance() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 1..=4), 1..=10)
        .prop_filter("needs a replicated record", |g| {
            g.iter().any(|r| r.len() > 1)
        })
}

fn reps(groups: &[Vec<f64>]) -> ReplicateSet<f64> {
    ReplicateSet::new((0..groups.len()).collect(), groups.to_vec()).unwrap()
}

#[test]
fn hand_case_is_two() {
    let r = reps(&[vec![1.0, 3.0], vec![2.0, 4.0]]);
    assert_eq!(estimate_error_variance(&r).unwrap(), 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pooled_estimator_equals_anova_oracle(groups in instance()) {
        let got = estimate_error_variance(&reps(&groups)).unwrap();
        let want = anova_within_mean_square(&groups);
        prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
    }

    #[test]
    fn shifting_a_record_leaves_estimate_unchanged(groups in instance(), shift in -50.0f64..50.0, which in 0usize..10) {
        let before = estimate_error_variance(&reps(&groups)).unwrap();
        let mut moved = groups.clone();
        let k = which % moved.len();
        for v in &mut moved[k] {
            *v += shift;
        }
        let after = estimate_error_variance(&reps(&moved)).unwrap();
        prop_assert!((before - after).abs() < 1e-9 * (1.0 + before));
    }
}

#[test]
fn bootstrap_recovers_residual_variance() {
    let mut r = rng(17);
    let x: Vec<f64> = (0..10_000)
        .map(|_| 3.0 * r.sample::<f64, _>(StandardNormal))
        .collect();
    let cohorts = vec![0usize; x.len()];
    let set = bootstrap_replicates(&x, &cohorts, ResidualPool::Global, 10, 4).unwrap();
    let est = estimate_error_variance(&set).unwrap();
    assert!((est / 9.0 - 1.0).abs() < 0.05, "{est}");
}

#[test]
fn contamination_adds_scaled_variance() {
    let x = vec![0.0; 100_000];
    let w = contaminate(&x, 1.0, 4.0, 8).unwrap();
    let (_, sd) = common::mean_sd(&w);
    assert!((3.9..=4.1).contains(&(sd * sd)));
    let w2 = contaminate(&x, 2.0, 4.0, 8).unwrap();
    let (_, sd2) = common::mean_sd(&w2);
    assert!(((sd2 * sd2) / (sd * sd) - 2.0).abs() < 0.05);
}

#[test]
fn independent_seeds_give_uncorrelated_noise() {
    let x = vec![0.0; 100_000];
    let a = contaminate(&x, 1.0, 1.0, 1).unwrap();
    let b = contaminate(&x, 1.0, 1.0, 2).unwrap();
    let (ma, sa) = common::mean_sd(&a);
    let (mb, sb) = common::mean_sd(&b);
    let cov = a
        .iter()
        .zip(&b)
        .map(|(u, v)| (u - ma) * (v - mb))
        .sum::<f64>()
        / (a.len() - 1) as f64;
    assert!((cov / (sa * sb)).abs() < 0.05);
}
