mod common;

use hbsimex::eval::{glm_report, intercept_slope_correlation};
use hbsimex::sampler::{BlockStats, CohortChain};
use hbsimex::{
    build_design, durbin_watson, fit_nb_glm, lppd, msle, waic, Chain, CountDataset, Covariate,
    HierParams, LogLikMatrix,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use common::rng;

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..12, 1usize..8)
        .prop_flat_map(|(j, n)| prop::collection::vec(prop::collection::vec(-30.0f64..0.0, n), j))
}

fn ulp_distance(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

proptest! {
    #[test]
    fn waic_identity_within_one_ulp(rows in matrix()) {
        let w = waic(&LogLikMatrix::new(rows).unwrap()).unwrap();
        prop_assert!(ulp_distance(w.waic, -2.0 * (w.lppd - w.penalty)) <= 1);
    }

    #[test]
    fn penalty_is_non_negative_sum_of_points(rows in matrix()) {
        let w = waic(&LogLikMatrix::new(rows).unwrap()).unwrap();
        prop_assert!(w.per_point_penalty.iter().all(|&p| p >= 0.0));
        let s: f64 = w.per_point_penalty.iter().sum();
        prop_assert_eq!(s, w.penalty);
    }

    #[test]
    fn lppd_invariant_to_draw_and_point_order(rows in matrix(), rot in 0usize..100) {
        let base = lppd(&LogLikMatrix::new(rows.clone()).unwrap()).unwrap();
        let mut by_draw = rows.clone();
        by_draw.reverse();
        let k = rot % by_draw.len();
        by_draw.rotate_left(k);
        let a = lppd(&LogLikMatrix::new(by_draw).unwrap()).unwrap();
        let by_point: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().rev().copied().collect()).collect();
        let b = lppd(&LogLikMatrix::new(by_point).unwrap()).unwrap();
        prop_assert!((a - base).abs() < 1e-9 * (1.0 + base.abs()));
        prop_assert!((b - base).abs() < 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn dw_of_reversed_trace_is_unchanged(trace in prop::collection::vec(-5.0f64..5.0, 3..60)) {
        prop_assume!(trace.iter().any(|&v| v != trace[0]));
        let rev: Vec<f64> = trace.iter().rev().copied().collect();
        let a = durbin_watson(&trace).unwrap();
        let b = durbin_watson(&rev).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a));
        prop_assert!((0.0..=4.0).contains(&a));
    }

    #[test]
    fn msle_unchanged_by_perfect_point_round_trip(
        pairs in prop::collection::vec((0.1f64..50.0, 0u64..60), 1..20),
        extra in 1u64..60,
    ) {
        let (p, y): (Vec<f64>, Vec<u64>) = pairs.into_iter().unzip();
        let base = msle(&p, &y).unwrap();
        let mut p2 = p.clone();
        let mut y2 = y.clone();
        p2.push(extra as f64);
        y2.push(extra);
        let grown = msle(&p2, &y2).unwrap();
        // A perfect point contributes zero to the sum.
        prop_assert!((grown * p2.len() as f64 - base * p.len() as f64).abs() < 1e-9);
        p2.pop();
        y2.pop();
        prop_assert_eq!(msle(&p2, &y2).unwrap(), base);
    }
}

#[test]
fn msle_of_e_scaled_predictions_is_one() {
    let y: Vec<u64> = vec![0, 1, 5, 17];
    let p: Vec<f64> = y
        .iter()
        .map(|&v| std::f64::consts::E * (1.0 + v as f64) - 1.0)
        .collect();
    assert!((msle(&p, &y).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn white_noise_dw_near_two() {
    let mut r = rng(1);
    let t: Vec<f64> = (0..10_000)
        .map(|_| r.sample::<f64, _>(StandardNormal))
        .collect();
    let dw = durbin_watson(&t).unwrap();
    assert!((1.9..=2.1).contains(&dw), "{dw}");
}

/// Mean depends on `u` only; `noise` is unrelated.
fn model_pair(seed: u64) -> (CountDataset, CountDataset) {
    let mut r = rng(seed);
    let n = 400;
    let u: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let noise: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let y: Vec<u64> = u
        .iter()
        .map(|&v| hbsimex::synth::nb_draw((1.0 + 0.6 * v).exp(), 2.0, &mut r).unwrap())
        .collect();
    let labels = vec!["a".to_string(); n];
    let make = |x: Vec<f64>| {
        CountDataset::from_labels(
            y.clone(),
            vec![Covariate::Numeric {
                name: "x".into(),
                values: x,
            }],
            &labels,
            0,
        )
        .unwrap()
    };
    (make(u), make(noise))
}

#[test]
fn generating_model_has_lower_waic_in_median() {
    let mut diffs: Vec<f64> = (0..20)
        .map(|seed| {
            let (good, bad) = model_pair(seed);
            let w = |ds: &CountDataset| {
                let d = build_design(ds).unwrap();
                let f = fit_nb_glm(ds, &d).unwrap();
                glm_report(&f.beta_hat, &f, ds, &d, 400, seed).unwrap().waic
            };
            w(&good) - w(&bad)
        })
        .collect();
    diffs.sort_by(f64::total_cmp);
    assert!(diffs[10] < 0.0, "median difference {}", diffs[10]);
}

fn stats() -> BlockStats {
    BlockStats {
        accepted: 0,
        proposed: 0,
        rate: 0.0,
        proposal_scale: 1.0,
    }
}

fn chain_with(cohorts: Vec<Vec<(f64, f64)>>) -> Chain {
    Chain {
        slope_names: vec!["x".into()],
        cohorts: cohorts
            .into_iter()
            .enumerate()
            .map(|(j, draws)| CohortChain {
                label: format!("c{j}"),
                draws: draws
                    .into_iter()
                    .map(|(c, b)| HierParams {
                        beta: vec![b],
                        c,
                        gamma: 1.0,
                    })
                    .collect(),
                hyper_draws: Vec::new(),
                beta: stats(),
                c: stats(),
                gamma: stats(),
                warnings: Vec::new(),
            })
            .collect(),
        seed: 0,
        lambda_used: 0.0,
        iterations: 3,
        burn_in: 0,
    }
}

#[test]
fn identical_cohorts_flag_degenerate_correlation() {
    let ch = chain_with(vec![vec![(1.0, 0.5); 3]; 4]);
    let r = intercept_slope_correlation(&ch, 0).unwrap();
    assert!(r.degenerate);
    assert!(r.per_draw.is_empty());
}

#[test]
fn two_cohorts_give_unit_magnitude_correlations() {
    let ch = chain_with(vec![
        vec![(1.0, 0.1), (2.0, 0.4)],
        vec![(3.0, 0.2), (1.0, 0.5)],
    ]);
    let r = intercept_slope_correlation(&ch, 0).unwrap();
    assert_eq!(r.per_draw, vec![1.0, -1.0]);
    assert!(!r.warnings.is_empty());
}
