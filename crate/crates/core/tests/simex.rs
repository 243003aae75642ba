mod common;

use hbsimex::simex::extrapolate_to;
use hbsimex::synth::{generate, TruthSpec};
use hbsimex::{build_design, extrapolate, fit_nb_glm, run_simex, CountDataset, SimexConfig};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use common::rng;

proptest! {
    #[test]
    fn extrapolation_is_affine_equivariant(
        vals in prop::collection::vec(-10.0f64..10.0, 5),
        c in 0.1f64..5.0,
        d in -10.0f64..10.0,
    ) {
        let grid = [0.0, 0.5, 1.0, 1.5, 2.0];
        let pts: Vec<(f64, f64)> = grid.iter().copied().zip(vals.iter().copied()).collect();
        let base = extrapolate(&pts, 2).unwrap().value;
        let moved: Vec<(f64, f64)> = pts.iter().map(|&(l, v)| (l, c * v + d)).collect();
        let got = extrapolate(&moved, 2).unwrap().value;
        prop_assert!((got - (c * base + d)).abs() < 1e-9 * (1.0 + got.abs()));
    }

    #[test]
    fn exact_quadratics_extrapolate_exactly(a in -5.0f64..5.0, b in -5.0f64..5.0, q in -5.0f64..5.0) {
        let pts: Vec<(f64, f64)> = [0.0, 1.0, 2.0].iter().map(|&l| (l, a + b * l + q * l * l)).collect();
        let v = extrapolate(&pts, 2).unwrap().value;
        prop_assert!((v - (a - b + q)).abs() < 1e-9);
    }
}

#[test]
fn extrapolate_to_other_targets() {
    let pts: Vec<(f64, f64)> = [0.0, 1.0, 2.0]
        .iter()
        .map(|&l| (l, 1.0 + 2.0 * l + 3.0 * l * l))
        .collect();
    let v = extrapolate_to(&pts, 2, 3.0).unwrap().value;
    assert!((v - 34.0).abs() < 1e-9);
}

/// Stub estimator with unit Gaussian noise around a constant.
fn noisy_stub(_: &CountDataset, seed: u64) -> hbsimex::Result<Vec<f64>> {
    let mut r = rng(seed);
    Ok(vec![r.sample::<f64, _>(StandardNormal)])
}

#[test]
fn monte_carlo_error_shrinks_like_root_b() {
    let (ds, _) = generate(1, 5, &TruthSpec::default(), 0).unwrap();
    let mut points = Vec::new();
    for b in [16usize, 64, 256, 1024] {
        let mut cfg = SimexConfig::new(1.0, 3);
        cfg.replicates = b;
        let mut errs = Vec::new();
        for rep in 0..40 {
            cfg.seed = 1000 + rep;
            let t = run_simex(noisy_stub, &ds, &cfg).unwrap();
            errs.push(t.points[2].mean[0]);
        }
        let (_, sd) = common::mean_sd(&errs);
        points.push(((b as f64).ln(), sd.ln()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
}

fn glm_slope(ds: &CountDataset, _seed: u64) -> hbsimex::Result<Vec<f64>> {
    Ok(fit_nb_glm(ds, &build_design(ds)?)?.beta_hat)
}

#[test]
fn naive_slope_trends_toward_zero_along_the_grid() {
    let spec = TruthSpec {
        log_c_sd: 0.0,
        beta_sd: 0.0,
        log_gamma_sd: 0.0,
        ..TruthSpec::default()
    };
    let (ds, _) = generate(1, 2000, &spec, 4).unwrap();
    let mut cfg = SimexConfig::new(1.0, 9);
    cfg.replicates = 20;
    let t = run_simex(glm_slope, &ds, &cfg).unwrap();
    for w in t.points.windows(2) {
        assert!(w[1].mean[1].abs() < w[0].mean[1].abs());
    }
    assert!(t.extrapolated[1].abs() > t.naive()[1].abs());
}

#[test]
fn naive_slope_matches_attenuation_factor() {
    // Gaussian U and eps keep E[y | x] log-linear with slope
    // beta * s2u / (s2u + s2e), here beta / 2.
    let spec = TruthSpec {
        log_c_sd: 0.0,
        beta_sd: 0.0,
        log_gamma_sd: 0.0,
        beta_mean: 0.4,
        ..TruthSpec::default()
    };
    let slopes: Vec<f64> = (0..20)
        .map(|s| {
            let (ds, _) = generate(1, 2000, &spec, s).unwrap();
            glm_slope(&ds, 0).unwrap()[1]
        })
        .collect();
    let (m, _) = common::mean_sd(&slopes);
    assert!((m - 0.2).abs() < 0.02, "mean naive slope {m}");
}
