mod common;

use hbsimex::synth::{generate, TruthSpec};
use hbsimex::{build_design, fit_nb_glm};

#[test]
fn near_poisson_limit_has_unit_dispersion_index() {
    let spec = TruthSpec {
        log_c_sd: 0.0,
        beta_mean: 0.0,
        beta_sd: 0.0,
        log_gamma_mean: 1e9f64.ln(),
        log_gamma_sd: 0.0,
        sigma2_eps: 0.0,
        ..TruthSpec::default()
    };
    let (ds, _) = generate(1, 100_000, &spec, 2).unwrap();
    let index = ds.outcome_variance() / ds.outcome_mean();
    assert!((0.9..=1.1).contains(&index), "{index}");
}

#[test]
fn null_effect_slope_is_insignificant() {
    let spec = TruthSpec {
        beta_mean: 0.0,
        beta_sd: 0.0,
        log_c_sd: 0.0,
        ..TruthSpec::default()
    };
    let (ds, _) = generate(1, 3000, &spec, 6).unwrap();
    let fit = fit_nb_glm(&ds, &build_design(&ds).unwrap()).unwrap();
    assert!(fit.beta_hat[1].abs() < 3.0 * fit.std_errors[1]);
}

#[test]
fn cohort_parameter_correlation_near_generating_value() {
    let spec = TruthSpec::default();
    let rs: Vec<f64> = (0..200)
        .map(|seed| {
            let (_, truth) = generate(36, 1, &spec, seed).unwrap();
            let a: Vec<f64> = truth.cohorts.iter().map(|c| c.c.ln()).collect();
            let b: Vec<f64> = truth.cohorts.iter().map(|c| c.beta).collect();
            let (ma, sa) = common::mean_sd(&a);
            let (mb, sb) = common::mean_sd(&b);
            a.iter()
                .zip(&b)
                .map(|(x, y)| (x - ma) * (y - mb))
                .sum::<f64>()
                / (35.0 * sa * sb)
        })
        .collect();
    let (mean_r, _) = common::mean_sd(&rs);
    assert!((-0.85..=-0.5).contains(&mean_r), "{mean_r}");
}

#[test]
fn outcomes_are_overdispersed() {
    for seed in 0..5 {
        let (ds, _) = generate(6, 400, &TruthSpec::default(), seed).unwrap();
        assert!(ds.outcome_variance() > ds.outcome_mean());
    }
}

#[test]
fn naive_slope_attenuated_relative_to_latent_fit() {
    let spec = TruthSpec {
        log_c_sd: 0.0,
        beta_sd: 0.0,
        log_gamma_sd: 0.0,
        ..TruthSpec::default()
    };
    let attenuated = (0..100)
        .filter(|&seed| {
            let (ds, truth) = generate(1, 500, &spec, seed).unwrap();
            let clean = truth.clean_dataset(&ds).unwrap();
            let naive = fit_nb_glm(&ds, &build_design(&ds).unwrap())
                .unwrap()
                .beta_hat[1];
            let latent = fit_nb_glm(&clean, &build_design(&clean).unwrap())
                .unwrap()
                .beta_hat[1];
            naive.abs() < latent.abs()
        })
        .count();
    assert!(attenuated >= 95, "{attenuated}/100");
}
