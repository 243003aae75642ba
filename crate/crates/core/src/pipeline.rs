//! End-to-end estimation for the four model variants, plus the seeded
//! per-cohort train/test split.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::count_glm::{fit_nb_glm, mom_dispersion, GlmFit};
use crate::data::{build_design, CountDataset, DesignMatrix};
use crate::error::{Error, Result};
use crate::eval::{chain_report, glm_report, MetricReport};
use crate::rng::{derive_seed, label_tag, stream};
use crate::sampler::{run_chain, Chain, ChainInit, FixedHypers, SamplerConfig};
use crate::simex::{aggregate, run_simex, SimexConfig, SimexTrace};

const SPLIT_TAG: u64 = 0x5b;
const CHAIN_TAG: u64 = 0xc4;
const GLM_DRAW_TAG: u64 = 0x9d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Glm,
    GlmSimex,
    Hb,
    HbSimex,
}

impl ModelKind {
    pub fn uses_simex(self) -> bool {
        matches!(self, ModelKind::GlmSimex | ModelKind::HbSimex)
    }

    pub fn is_bayesian(self) -> bool {
        matches!(self, ModelKind::Hb | ModelKind::HbSimex)
    }
}

/// Optional replacements for the default fixed hyperparameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    pub alpha: Option<f64>,
    pub sigma_e: Option<Vec<Vec<f64>>>,
    pub prior_mean_c: Option<f64>,
    pub prior_mean_gamma: Option<f64>,
    pub s: Option<f64>,
    pub t: Option<f64>,
    pub u: Option<f64>,
    pub v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub model: ModelKind,
    /// Required for the SIMEX variants.
    pub simex: Option<SimexConfig>,
    pub sampler: SamplerConfig,
    pub hypers: HyperOverrides,
    /// Coefficient draws used for the GLM predictive metrics.
    pub glm_draws: usize,
    pub seed: u64,
}

impl FitOptions {
    pub fn new(model: ModelKind, seed: u64) -> Self {
        Self {
            model,
            simex: None,
            sampler: SamplerConfig::default(),
            hypers: HyperOverrides::default(),
            glm_draws: 1000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.uses_simex() {
            self.simex
                .as_ref()
                .ok_or_else(|| {
                    Error::Config(format!("model {:?} needs SIMEX settings", self.model))
                })?
                .validate()?;
        }
        if self.model.is_bayesian() {
            self.sampler.validate()?;
        }
        if self.glm_draws < 2 {
            return Err(Error::Config("glm_draws must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub column_names: Vec<String>,
    /// Naive GLM on the observed covariate.
    pub glm: GlmFit,
    /// GLM coefficients over the contamination grid.
    pub simex: Option<SimexTrace>,
    /// Pooled coefficients: naive or SIMEX-corrected.
    pub coefficients: Vec<f64>,
    pub fixed: Option<FixedHypers>,
    /// Posterior draws; for `hb-simex`, the uncontaminated chain shifted to
    /// the extrapolated per-cohort means.
    pub chain: Option<Chain>,
    /// Per-cohort posterior means of `(beta, ln C, ln gamma)` over the grid.
    pub hb_simex: Option<SimexTrace>,
    pub warnings: Vec<String>,
}

fn glm_estimator(
    design: &DesignMatrix,
) -> impl Fn(&CountDataset, u64) -> Result<Vec<f64>> + Sync + '_ {
    move |ds: &CountDataset, _seed: u64| {
        let d = design.with_error_prone(ds.error_prone_values())?;
        Ok(fit_nb_glm(ds, &d)?.beta_hat)
    }
}

/// Default fixed hyperparameters from a pooled fit, then overrides.
pub fn fixed_hypers(
    train: &CountDataset,
    glm: &GlmFit,
    coefficients: &[f64],
    overrides: &HyperOverrides,
    warnings: &mut Vec<String>,
) -> Result<FixedHypers> {
    let k = coefficients.len();
    let sigma_0: Vec<Vec<f64>> = (1..k)
        .map(|i| (1..k).map(|j| glm.cov_beta[i][j]).collect())
        .collect();
    let mom = match mom_dispersion::<f64>(train.y()) {
        Ok(g) => g,
        Err(e) => {
            warnings.push(format!(
                "{e}; dispersion prior mean set to the GLM estimate"
            ));
            glm.gamma_hat
        }
    };
    let mut fixed = FixedHypers::with_defaults(
        coefficients[1..].to_vec(),
        sigma_0,
        train.n() as f64,
        overrides.prior_mean_c.unwrap_or(coefficients[0].exp()),
        overrides.prior_mean_gamma.unwrap_or(mom),
    )?;
    if let Some(a) = overrides.alpha {
        fixed.set_alpha(a);
    }
    if let Some(se) = &overrides.sigma_e {
        fixed.sigma_e = se.clone();
    }
    for (slot, v) in [
        (&mut fixed.s, overrides.s),
        (&mut fixed.t, overrides.t),
        (&mut fixed.u, overrides.u),
        (&mut fixed.v, overrides.v),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    fixed.validate()?;
    Ok(fixed)
}

/// Fit one model variant on training data.
pub fn fit(train: &CountDataset, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let design = build_design(train)?;
    let column_names = design.column_names();
    let glm = fit_nb_glm(train, &design)?;
    let mut warnings = Vec::new();

    let simex = if opts.model.uses_simex() {
        let cfg = opts.simex.as_ref().expect("validated");
        Some(run_simex(glm_estimator(&design), train, cfg)?.with_names(column_names.clone()))
    } else {
        None
    };
    let coefficients = simex
        .as_ref()
        .map_or_else(|| glm.beta_hat.clone(), |t| t.extrapolated.clone());

    let mut out = FitResult {
        model: opts.model,
        column_names,
        glm,
        simex,
        coefficients,
        fixed: None,
        chain: None,
        hb_simex: None,
        warnings: Vec::new(),
    };
    if !opts.model.is_bayesian() {
        out.warnings = warnings;
        return Ok(out);
    }

    let fixed = fixed_hypers(
        train,
        &out.glm,
        &out.coefficients,
        &opts.hypers,
        &mut warnings,
    )?;
    let init = ChainInit::from_fixed(&fixed, train.m());
    let chain_seed = derive_seed(opts.seed, &[CHAIN_TAG]);
    let chain = match opts.model {
        ModelKind::Hb => run_chain(
            train,
            &design,
            &fixed,
            &init,
            0.0,
            0.0,
            &opts.sampler,
            chain_seed,
        )?,
        ModelKind::HbSimex => {
            let cfg = opts.simex.as_ref().expect("validated");
            let (chain, trace) = hb_simex_chain(
                train,
                &design,
                &fixed,
                &init,
                &opts.sampler,
                cfg,
                chain_seed,
            )?;
            out.hb_simex = Some(trace);
            chain
        }
        _ => unreachable!(),
    };
    warnings.extend(chain.warnings());
    out.fixed = Some(fixed);
    out.chain = Some(chain);
    out.warnings = warnings;
    Ok(out)
}

/// Chains over the contamination grid; per-cohort posterior means are
/// extrapolated and the uncontaminated first-replicate chain is shifted onto
/// the extrapolated means.
fn hb_simex_chain(
    train: &CountDataset,
    design: &DesignMatrix,
    fixed: &FixedHypers,
    init: &ChainInit,
    sampler: &SamplerConfig,
    cfg: &SimexConfig,
    seed: u64,
) -> Result<(Chain, SimexTrace)> {
    cfg.validate()?;
    let b = cfg.replicates;
    let cells = cfg.lambda_grid.len() * b;
    let chain_seed = |cell: usize| derive_seed(seed, &[(cell / b) as u64, (cell % b) as u64]);
    let base = run_chain(
        train,
        design,
        fixed,
        init,
        cfg.lambda_grid[0],
        cfg.sigma2_eps,
        sampler,
        chain_seed(0),
    )?;
    let rest: Vec<Result<Vec<f64>>> = (1..cells)
        .into_par_iter()
        .map(|cell| {
            let lambda = cfg.lambda_grid[cell / b];
            let c = run_chain(
                train,
                design,
                fixed,
                init,
                lambda,
                cfg.sigma2_eps,
                sampler,
                chain_seed(cell),
            )
            .map_err(|e| Error::Estimator {
                lambda,
                replicate: cell % b,
                source: Box::new(e),
            })?;
            cohort_means(&c)
        })
        .collect();
    let mut estimates = vec![cohort_means(&base)?];
    for r in rest {
        estimates.push(r?);
    }
    let names = base
        .cohorts
        .iter()
        .flat_map(|c| {
            base.slope_names
                .iter()
                .map(move |s| format!("{}/beta[{s}]", c.label))
                .chain([format!("{}/ln_C", c.label), format!("{}/ln_gamma", c.label)])
        })
        .collect();
    let trace = aggregate(cfg, &estimates)?.with_names(names);
    let shifted = shift_chain(base, &estimates[0], &trace.extrapolated);
    Ok((shifted, trace))
}

fn cohort_means(chain: &Chain) -> Result<Vec<f64>> {
    if chain.draws_per_cohort() == 0 {
        return Err(Error::Config("hb-simex needs post-burn-in draws".into()));
    }
    Ok(chain
        .cohorts
        .iter()
        .flat_map(|c| c.log_scale_means())
        .collect())
}

/// Translate every cohort's draws by `target - current` on the
/// `(beta, ln C, ln gamma)` scale.
fn shift_chain(mut chain: Chain, current: &[f64], target: &[f64]) -> Chain {
    let p = chain.slope_names.len();
    for (j, c) in chain.cohorts.iter_mut().enumerate() {
        let off = j * (p + 2);
        let delta: Vec<f64> = (0..p + 2)
            .map(|k| target[off + k] - current[off + k])
            .collect();
        for d in &mut c.draws {
            for (b, dk) in d.beta.iter_mut().zip(&delta) {
                *b += dk;
            }
            d.c *= delta[p].exp();
            d.gamma *= delta[p + 1].exp();
        }
    }
    chain
}

/// Predictive metrics of a fitted model on `data`.
pub fn evaluate(
    result: &FitResult,
    data: &CountDataset,
    opts: &FitOptions,
) -> Result<MetricReport> {
    let design = build_design(data)?;
    if design.column_names() != result.column_names {
        return Err(Error::Validation(
            "evaluation data expands to different design columns".into(),
        ));
    }
    match &result.chain {
        Some(chain) => chain_report(chain, data, &design),
        None => glm_report(
            &result.coefficients,
            &result.glm,
            data,
            &design,
            opts.glm_draws,
            derive_seed(opts.seed, &[GLM_DRAW_TAG]),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_per_cohort: usize,
    pub test_per_cohort: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Cohorts too small for disjoint samples of the requested sizes.
    pub resampled_cohorts: Vec<String>,
}

/// Per-cohort seeded split. A cohort with at least `n + m` records gives
/// disjoint samples without replacement; a smaller cohort is partitioned in
/// proportion `n : m` and each part resampled with replacement to its size.
pub fn split_rows(dataset: &CountDataset, cfg: &SplitConfig) -> Result<Split> {
    let (n, m) = (cfg.train_per_cohort, cfg.test_per_cohort);
    if n == 0 {
        return Err(Error::Config(
            "training split needs at least one record per cohort".into(),
        ));
    }
    let mut out = Split {
        train_rows: Vec::new(),
        test_rows: Vec::new(),
        resampled_cohorts: Vec::new(),
    };
    for (j, rows) in dataset.cohort_rows().into_iter().enumerate() {
        let label = &dataset.cohort_labels()[j];
        let mut rng = stream(cfg.seed, &[SPLIT_TAG, label_tag(label)]);
        let mut rows = rows;
        rows.shuffle(&mut rng);
        if rows.len() >= n + m {
            out.train_rows.extend_from_slice(&rows[..n]);
            out.test_rows.extend_from_slice(&rows[n..n + m]);
            continue;
        }
        out.resampled_cohorts.push(label.clone());
        let k = rows.len();
        let n_train = if m == 0 || k == 1 {
            k
        } else {
            ((k as f64 * n as f64 / (n + m) as f64).round() as usize).clamp(1, k - 1)
        };
        let (tr, te) = rows.split_at(n_train);
        out.train_rows
            .extend((0..n).map(|_| tr[rng.random_range(0..tr.len())]));
        if !te.is_empty() {
            out.test_rows
                .extend((0..m).map(|_| te[rng.random_range(0..te.len())]));
        }
    }
    Ok(out)
}
