mod common;

use hbsimex::pipeline::{fixed_hypers, HyperOverrides};
use hbsimex::sampler::blocks::{sample_a, sample_k};
use hbsimex::sampler::dist::cholesky_with_jitter;
use hbsimex::sampler::{CohortData, CohortSampler, GammaRateSource};
use hbsimex::synth::{generate, nb_draw, TruthSpec};
use hbsimex::{
    build_design, fit_nb_glm, run_chain, Chain, ChainInit, CountDataset, FixedHypers, HierParams,
    HyperParams, SamplerConfig,
};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};

use common::{ks_critical, ks_statistic, rng};

const KEEP: usize = 20_000;
const THIN: usize = 50;

fn prior_sampler(theta: HierParams, delta: HyperParams) -> CohortSampler {
    let p = theta.beta.len();
    CohortSampler::new(
        CohortData::empty(p),
        theta,
        delta,
        &DMatrix::identity(p, p),
        0.3,
    )
    .unwrap()
}

/// Adapt, freeze, then keep every `THIN`-th state.
fn run_block<
    F: FnMut(&mut CohortSampler, &mut rand_chacha::ChaCha20Rng),
    G: Fn(&CohortSampler) -> Vec<f64>,
>(
    s: &mut CohortSampler,
    seed: u64,
    mut step: F,
    read: G,
) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    for _ in 0..5_000 {
        step(s, &mut r);
    }
    s.freeze_adaptation();
    (0..KEEP)
        .map(|_| {
            for _ in 0..THIN {
                step(s, &mut r);
            }
            read(s)
        })
        .collect()
}

fn column(draws: &[Vec<f64>], i: usize) -> Vec<f64> {
    draws.iter().map(|d| d[i]).collect()
}

fn assert_ks(got: &[f64], reference: &[f64], what: &str) {
    let d = ks_statistic(got, reference);
    let crit = ks_critical(got.len(), reference.len(), 0.01);
    assert!(d < crit, "{what}: KS {d} >= {crit}");
}

#[test]
fn slope_block_recovers_mvn_prior() {
    let mu = vec![0.5, -0.3];
    let lambda = vec![vec![0.4, 0.1], vec![0.1, 0.2]];
    let delta = HyperParams {
        mu: mu.clone(),
        lambda: lambda.clone(),
        k: 1.0,
        a: 1.0,
    };
    let mut s = prior_sampler(
        HierParams {
            beta: vec![0.0, 0.0],
            c: 1.0,
            gamma: 1.0,
        },
        delta,
    );
    let chol = cholesky_with_jitter(&DMatrix::from_fn(2, 2, |i, j| lambda[i][j])).unwrap();
    let draws = run_block(
        &mut s,
        3,
        |s, r| {
            s.sample_beta_mh(&chol, false, r);
        },
        |s| s.theta.beta.clone(),
    );
    let mut r = rng(99);
    for i in 0..2 {
        let reference: Vec<f64> = (0..KEEP)
            .map(|_| mu[i] + lambda[i][i].sqrt() * r.sample::<f64, _>(StandardNormal))
            .collect();
        assert_ks(&column(&draws, i), &reference, &format!("beta[{i}]"));
    }
}

#[test]
fn intercept_block_recovers_running_gamma_prior() {
    // h = 1 and c_sum = 2 give rate k * 1 / 2 = 1.
    let delta = HyperParams {
        mu: vec![0.0],
        lambda: vec![vec![1.0]],
        k: 2.0,
        a: 1.0,
    };
    let mut s = prior_sampler(
        HierParams {
            beta: vec![0.0],
            c: 2.0,
            gamma: 1.0,
        },
        delta,
    );
    let draws = run_block(
        &mut s,
        4,
        |s, r| {
            s.sample_c_mh(false, r);
        },
        |s| vec![s.theta.c],
    );
    let mut r = rng(98);
    let g = Gamma::new(2.0, 1.0).unwrap();
    let reference: Vec<f64> = (0..KEEP).map(|_| r.sample(g)).collect();
    assert_ks(&column(&draws, 0), &reference, "C");
}

#[test]
fn dispersion_block_recovers_running_gamma_prior() {
    // h = 1 and gamma_sum = 1.5 give rate 3 / 1.5 = 2.
    let delta = HyperParams {
        mu: vec![0.0],
        lambda: vec![vec![1.0]],
        k: 1.0,
        a: 3.0,
    };
    let mut s = prior_sampler(
        HierParams {
            beta: vec![0.0],
            c: 1.0,
            gamma: 1.5,
        },
        delta,
    );
    let draws = run_block(
        &mut s,
        5,
        |s, r| {
            s.sample_gamma_mh(GammaRateSource::DispersionSum, false, r);
        },
        |s| vec![s.theta.gamma],
    );
    let mut r = rng(97);
    let g = Gamma::new(3.0, 0.5).unwrap();
    let reference: Vec<f64> = (0..KEEP).map(|_| r.sample(g)).collect();
    assert_ks(&column(&draws, 0), &reference, "gamma");
}

#[test]
fn intercept_sum_source_uses_intercept_running_sum() {
    // gamma_sum is 1 but c_sum is 6: rate a * 1 / 6 = 0.5.
    let delta = HyperParams {
        mu: vec![0.0],
        lambda: vec![vec![1.0]],
        k: 1.0,
        a: 3.0,
    };
    let mut s = prior_sampler(
        HierParams {
            beta: vec![0.0],
            c: 6.0,
            gamma: 1.0,
        },
        delta,
    );
    let draws = run_block(
        &mut s,
        6,
        |s, r| {
            s.sample_gamma_mh(GammaRateSource::InterceptSum, false, r);
        },
        |s| vec![s.theta.gamma],
    );
    let (m, _) = common::mean_sd(&column(&draws, 0));
    assert!((m / 6.0 - 1.0).abs() < 0.05, "{m}");
}

#[test]
fn k_and_a_match_their_gamma_means() {
    let fixed = FixedHypers::with_defaults(vec![0.1], vec![vec![0.01]], 100.0, 1.0, 1.0).unwrap();
    let mut fixed = fixed;
    fixed.s = 2.0;
    fixed.t = 1.5;
    fixed.u = 0.5;
    fixed.v = 2.0;
    let mut r = rng(7);
    let n = 200_000;
    let k: Vec<f64> = (0..n).map(|_| sample_k(&fixed, &mut r).unwrap()).collect();
    let a: Vec<f64> = (0..n)
        .map(|_| sample_a(1.0, 0.5, &fixed, &mut r).unwrap())
        .collect();
    let (mk, _) = common::mean_sd(&k);
    let (ma, _) = common::mean_sd(&a);
    assert!((mk / 3.0 - 1.0).abs() < 0.01, "{mk}");
    // Shape 1 + 0.5, scale 0.5 + 2.
    assert!((ma / 3.75 - 1.0).abs() < 0.01, "{ma}");
}

/// Intercept and dispersion blocks only, on a single cohort with a zero
/// covariate.
fn intercept_only_posterior(y: &[u64], seed: u64) -> (Vec<f64>, Vec<f64>) {
    let rows = vec![vec![0.0]; y.len()];
    let data = CohortData::new(y, &rows, 1).unwrap();
    let delta = HyperParams {
        mu: vec![0.0],
        lambda: vec![vec![1.0]],
        k: 2.0,
        a: 2.0,
    };
    let mut s = CohortSampler::new(
        data,
        HierParams {
            beta: vec![0.0],
            c: 1.0,
            gamma: 1.0,
        },
        delta,
        &DMatrix::identity(1, 1),
        0.3,
    )
    .unwrap();
    let mut r = rng(seed);
    let (mut cs, mut gs) = (Vec::new(), Vec::new());
    for h in 0..4_000 {
        s.sample_c_mh(false, &mut r);
        s.sample_gamma_mh(GammaRateSource::DispersionSum, false, &mut r);
        s.c_sum += s.theta.c;
        s.gamma_sum += s.theta.gamma;
        s.h += 1;
        if h == 2_000 {
            s.freeze_adaptation();
        }
        if h >= 2_000 {
            cs.push(s.theta.c);
            gs.push(s.theta.gamma);
        }
    }
    (cs, gs)
}

#[test]
fn intercept_only_chain_covers_known_intercept() {
    let covered = (0..20)
        .filter(|&seed| {
            let mut r = rng(1000 + seed);
            let y: Vec<u64> = (0..500)
                .map(|_| nb_draw(3.0, 2.0, &mut r).unwrap())
                .collect();
            let (cs, _) = intercept_only_posterior(&y, seed);
            let (m, sd) = common::mean_sd(&cs);
            (m - 3.0).abs() < 3.0 * sd
        })
        .count();
    assert!(covered >= 19, "{covered}/20");
}

#[test]
fn overdispersed_data_gives_small_dispersion_posterior() {
    let mut r = rng(55);
    let y: Vec<u64> = (0..500)
        .map(|_| nb_draw(4.0, 0.5, &mut r).unwrap())
        .collect();
    let (_, mut gs) = intercept_only_posterior(&y, 1);
    gs.sort_by(f64::total_cmp);
    let median = gs[gs.len() / 2];
    assert!((0.25..=1.0).contains(&median), "{median}");
}

fn setup(cohorts: usize, per: usize, seed: u64) -> (CountDataset, FixedHypers) {
    let (ds, _) = generate(cohorts, per, &TruthSpec::default(), seed).unwrap();
    let glm = fit_nb_glm(&ds, &build_design(&ds).unwrap()).unwrap();
    let fixed = fixed_hypers(
        &ds,
        &glm,
        &glm.beta_hat,
        &HyperOverrides::default(),
        &mut Vec::new(),
    )
    .unwrap();
    (ds, fixed)
}

fn chain(ds: &CountDataset, fixed: &FixedHypers, cfg: &SamplerConfig, seed: u64) -> Chain {
    let design = build_design(ds).unwrap();
    run_chain(
        ds,
        &design,
        fixed,
        &ChainInit::from_fixed(fixed, ds.m()),
        0.0,
        0.0,
        cfg,
        seed,
    )
    .unwrap()
}

fn short() -> SamplerConfig {
    SamplerConfig {
        iterations: 400,
        ..SamplerConfig::default()
    }
}

#[test]
fn chain_states_stay_positive_and_finite() {
    let (ds, fixed) = setup(4, 60, 2);
    let ch = chain(&ds, &fixed, &short(), 9);
    for c in &ch.cohorts {
        assert_eq!(c.draws.len(), 200);
        for d in &c.draws {
            assert!(d.c > 0.0 && d.c.is_finite());
            assert!(d.gamma > 0.0 && d.gamma.is_finite());
            assert!(d.beta.iter().all(|b| b.is_finite()));
        }
        for h in &c.hyper_draws {
            assert!(h.k > 0.0 && h.a > 0.0);
        }
    }
}

#[test]
fn identical_seeds_give_identical_chains_across_pools() {
    let (ds, fixed) = setup(5, 40, 3);
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = one.install(|| chain(&ds, &fixed, &short(), 11));
    let b = four.install(|| chain(&ds, &fixed, &short(), 11));
    assert_eq!(a, b);
    let c = chain(&ds, &fixed, &short(), 12);
    assert_ne!(a, c);
}

#[test]
fn reordering_cohort_blocks_leaves_each_cohort_chain_unchanged() {
    let (ds, fixed) = setup(4, 30, 4);
    let mut rows: Vec<usize> = Vec::new();
    for block in ds.cohort_rows().into_iter().rev() {
        rows.extend(block);
    }
    let moved = ds.select_compact(&rows).unwrap();
    let a = chain(&ds, &fixed, &short(), 21);
    let b = chain(&moved, &fixed, &short(), 21);
    for ca in &a.cohorts {
        let cb = b.cohorts.iter().find(|c| c.label == ca.label).unwrap();
        assert_eq!(ca.draws, cb.draws, "cohort {}", ca.label);
    }
}

#[test]
fn burn_in_equal_to_iterations_keeps_no_draws() {
    let (ds, fixed) = setup(2, 30, 5);
    let cfg = SamplerConfig {
        iterations: 50,
        burn_in: Some(50),
        ..SamplerConfig::default()
    };
    let ch = chain(&ds, &fixed, &cfg, 1);
    assert!(ch.cohorts.iter().all(|c| c.draws.is_empty()));
}
