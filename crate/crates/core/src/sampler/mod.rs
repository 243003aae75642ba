//! Hierarchical Bayesian NB sampler with cohort-varying intercepts, slopes
//! and dispersions.
//!
//! Per cohort `j` the model is
//! `y_ij ~ NB(C_j exp(w_ij' beta_j), gamma_j)` with
//! `beta_j ~ MVN(mu_j, Lambda_j)`, `Lambda_j ~ IW`, `mu_j ~ MVN` anchored at the
//! pooled GLM slopes, and running-mean Gamma priors on `C_j` and `gamma_j`.
//! Cohorts share only fixed hyperparameters, so their chains run
//! independently and in parallel.

pub mod blocks;
pub mod dist;
pub mod mh;

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CountDataset, DesignMatrix};
use crate::error::{Error, Result};
use crate::eval::durbin_watson;
use crate::measurement::contaminate;
use crate::rng::{derive_seed, label_tag, stream};

pub use blocks::{
    mu_weights, running_prior_rate, sample_a, sample_k, sample_lambda, sample_mu, CohortData,
    CohortSampler,
};

/// Tag for the chain-level contamination stream.
const CONTAMINATION_TAG: u64 = 0xc0;

/// Thinning applied before the Durbin-Watson diagnostic.
pub const DW_THIN: usize = 10;

/// Per-cohort parameters `(beta_j, C_j, gamma_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierParams {
    pub beta: Vec<f64>,
    pub c: f64,
    pub gamma: f64,
}

impl HierParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) || !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Domain(format!(
                "intercept and dispersion must be positive and finite (C={}, gamma={})",
                self.c, self.gamma
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("non-finite slope".into()));
        }
        Ok(())
    }
}

/// Per-cohort hyperparameters `(mu_j, Lambda_j, k_j, a_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub mu: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub k: f64,
    pub a: f64,
}

impl HyperParams {
    /// `mu` at the GLM slopes, `Lambda = Sigma_E`, `k` and `a` at their
    /// Gamma means.
    pub fn initial(fixed: &FixedHypers) -> Self {
        Self {
            mu: fixed.beta_glm.clone(),
            lambda: fixed.sigma_e.clone(),
            k: fixed.s * fixed.t,
            a: fixed.u * fixed.v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !(self.a > 0.0) {
            return Err(Error::Domain(format!(
                "k and a must be positive (k={}, a={})",
                self.k, self.a
            )));
        }
        let p = self.mu.len();
        if self.lambda.len() != p || self.lambda.iter().any(|r| r.len() != p) {
            return Err(Error::Validation("Lambda shape does not match mu".into()));
        }
        if p > 0 && to_matrix(&self.lambda).cholesky().is_none() {
            return Err(Error::Numerical("Lambda is not positive definite".into()));
        }
        Ok(())
    }
}

/// Which running sum sets the rate of the dispersion prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GammaRateSource {
    /// Past dispersion draws; the prior mean tracks the running mean of
    /// `gamma_j`.
    #[default]
    DispersionSum,
    /// Past intercept draws, as in the intercept update.
    InterceptSum,
}

/// Hyperparameters held fixed for the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedHypers {
    pub alpha: f64,
    pub nu: f64,
    pub tau: f64,
    pub s: f64,
    pub t: f64,
    pub u: f64,
    pub v: f64,
    /// `P x P` scale of the `Lambda_j` prior.
    pub sigma_e: Vec<Vec<f64>>,
    /// Slope block of the pooled GLM covariance.
    pub sigma_0: Vec<Vec<f64>>,
    /// Total number of training records.
    pub g: f64,
    pub prior_mean_c: f64,
    pub prior_mean_gamma: f64,
    /// SIMEX-corrected pooled GLM slopes anchoring `mu_j`.
    pub beta_glm: Vec<f64>,
}

impl FixedHypers {
    /// Defaults: `alpha = 0.01`, `nu = (alpha+1) + (P+1) + 1`, `tau = alpha+1`,
    /// `s = 0.001`, `t = u = v = 1`, `Sigma_E = diag(Sigma_0)`.
    pub fn with_defaults(
        beta_glm: Vec<f64>,
        sigma_0: Vec<Vec<f64>>,
        g: f64,
        prior_mean_c: f64,
        prior_mean_gamma: f64,
    ) -> Result<Self> {
        let alpha = 0.01;
        let p = beta_glm.len();
        let sigma_e = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| if i == j { sigma_0[i][i] } else { 0.0 })
                    .collect()
            })
            .collect();
        let out = Self {
            alpha,
            nu: (alpha + 1.0) + (p as f64 + 1.0) + 1.0,
            tau: alpha + 1.0,
            s: 0.001,
            t: 1.0,
            u: 1.0,
            v: 1.0,
            sigma_e,
            sigma_0,
            g,
            prior_mean_c,
            prior_mean_gamma,
            beta_glm,
        };
        out.validate()?;
        Ok(out)
    }

    /// Re-derive `nu` and `tau` from `alpha`.
    pub fn set_alpha(&mut self, alpha: f64) {
        let p = self.beta_glm.len() as f64;
        self.alpha = alpha;
        self.nu = (alpha + 1.0) + (p + 1.0) + 1.0;
        self.tau = alpha + 1.0;
    }

    pub fn slopes(&self) -> usize {
        self.beta_glm.len()
    }

    pub fn sigma_e_matrix(&self) -> DMatrix<f64> {
        to_matrix(&self.sigma_e)
    }

    pub fn sigma_0_matrix(&self) -> DMatrix<f64> {
        to_matrix(&self.sigma_0)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.slopes();
        let square = |m: &Vec<Vec<f64>>| m.len() == p && m.iter().all(|r| r.len() == p);
        if !square(&self.sigma_e) || !square(&self.sigma_0) {
            return Err(Error::Parameter(format!(
                "Sigma_E and Sigma_0 must be {p} x {p}"
            )));
        }
        if !(self.nu > p as f64 + 1.0) {
            return Err(Error::Parameter(format!(
                "nu must exceed P + 1 = {}, got {}",
                p + 1,
                self.nu
            )));
        }
        for (name, v) in [
            ("tau", self.tau),
            ("s", self.s),
            ("t", self.t),
            ("u", self.u),
            ("v", self.v),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.g >= 1.0) {
            return Err(Error::Parameter(format!(
                "g must be at least 1, got {}",
                self.g
            )));
        }
        if !(self.prior_mean_c > 0.0 && self.prior_mean_c.is_finite())
            || !(self.prior_mean_gamma > 0.0 && self.prior_mean_gamma.is_finite())
        {
            return Err(Error::Parameter(
                "prior means must be positive and finite".into(),
            ));
        }
        if p > 0 && self.sigma_e_matrix().cholesky().is_none() {
            return Err(Error::Parameter("Sigma_E is not positive definite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Total sweeps `H`, burn-in included.
    pub iterations: usize,
    /// Defaults to `iterations / 2`.
    pub burn_in: Option<usize>,
    /// Accept only non-decreasing moves instead of Metropolis.
    pub greedy_accept: bool,
    pub gamma_rate_source: GammaRateSource,
    pub target_acceptance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            burn_in: None,
            greedy_accept: false,
            gamma_rate_source: GammaRateSource::DispersionSum,
            target_acceptance: 0.3,
        }
    }
}

impl SamplerConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in() > self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} exceeds iterations {}",
                self.burn_in(),
                self.iterations
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Starting state for every cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainInit {
    pub theta: Vec<HierParams>,
    pub delta: Vec<HyperParams>,
}

impl ChainInit {
    /// Every cohort starts at the pooled estimates.
    pub fn from_fixed(fixed: &FixedHypers, cohorts: usize) -> Self {
        let theta = HierParams {
            beta: fixed.beta_glm.clone(),
            c: fixed.prior_mean_c,
            gamma: fixed.prior_mean_gamma,
        };
        Self {
            theta: vec![theta; cohorts],
            delta: vec![HyperParams::initial(fixed); cohorts],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub accepted: usize,
    pub proposed: usize,
    /// Post-adaptation acceptance rate.
    pub rate: f64,
    pub proposal_scale: f64,
}

impl From<&mh::AdaptiveScale> for BlockStats {
    fn from(s: &mh::AdaptiveScale) -> Self {
        Self {
            accepted: s.accepted,
            proposed: s.proposed,
            rate: s.acceptance_rate(),
            proposal_scale: s.scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortChain {
    pub label: String,
    pub draws: Vec<HierParams>,
    pub hyper_draws: Vec<HyperParams>,
    pub beta: BlockStats,
    pub c: BlockStats,
    pub gamma: BlockStats,
    pub warnings: Vec<String>,
}

impl CohortChain {
    /// Trace of parameter `index` in the order slopes, `C`, `gamma`.
    pub fn trace(&self, index: usize) -> Vec<f64> {
        let p = self.draws.first().map_or(0, |d| d.beta.len());
        self.draws
            .iter()
            .map(|d| match index {
                i if i < p => d.beta[i],
                i if i == p => d.c,
                _ => d.gamma,
            })
            .collect()
    }

    /// Posterior means of `(beta, ln C, ln gamma)` flattened.
    pub fn log_scale_means(&self) -> Vec<f64> {
        let n = self.draws.len() as f64;
        let p = self.draws.first().map_or(0, |d| d.beta.len());
        let mut out = vec![0.0; p + 2];
        for d in &self.draws {
            for (o, b) in out.iter_mut().zip(&d.beta) {
                *o += b;
            }
            out[p] += d.c.ln();
            out[p + 1] += d.gamma.ln();
        }
        out.iter_mut().for_each(|v| *v /= n);
        out
    }
}

/// Post-burn-in draws for every cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub slope_names: Vec<String>,
    pub cohorts: Vec<CohortChain>,
    pub seed: u64,
    pub lambda_used: f64,
    pub iterations: usize,
    pub burn_in: usize,
}

impl Chain {
    pub fn draws_per_cohort(&self) -> usize {
        self.cohorts.first().map_or(0, |c| c.draws.len())
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.slope_names
            .iter()
            .map(|s| format!("beta[{s}]"))
            .chain(["C".to_string(), "gamma".to_string()])
            .collect()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.cohorts
            .iter()
            .flat_map(|c| c.warnings.iter().cloned())
            .collect()
    }

    /// Long format `iteration,cohort,parameter,value`; iterations count from
    /// the first post-burn-in sweep.
    pub fn write_draws_csv<W: Write>(&self, writer: W) -> Result<()> {
        let names = self.parameter_names();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "cohort", "parameter", "value"])?;
        for c in &self.cohorts {
            for (it, d) in c.draws.iter().enumerate() {
                let values = d.beta.iter().copied().chain([d.c, d.gamma]);
                for (name, v) in names.iter().zip(values) {
                    w.write_record([
                        (self.burn_in + it + 1).to_string(),
                        c.label.clone(),
                        name.clone(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> ChainSummary {
        let names = self.parameter_names();
        let cohorts = self
            .cohorts
            .iter()
            .map(|c| CohortSummary {
                label: c.label.clone(),
                parameters: names
                    .iter()
                    .enumerate()
                    .map(|(i, name)| ParameterSummary::from_trace(name, &c.trace(i)))
                    .collect(),
                acceptance_beta: c.beta.rate,
                acceptance_c: c.c.rate,
                acceptance_gamma: c.gamma.rate,
                warnings: c.warnings.clone(),
            })
            .collect();
        ChainSummary {
            seed: self.seed,
            lambda_used: self.lambda_used,
            iterations: self.iterations,
            burn_in: self.burn_in,
            draws: self.draws_per_cohort(),
            cohorts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    /// Durbin-Watson statistic of the thinned trace; absent when undefined.
    pub durbin_watson: Option<f64>,
}

impl ParameterSummary {
    pub fn from_trace(name: &str, trace: &[f64]) -> Self {
        let n = trace.len();
        let mean = trace.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (trace.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            f64::NAN
        };
        let mut sorted = trace.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if n == 0 {
                return f64::NAN;
            }
            let pos = p * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        };
        let thinned: Vec<f64> = trace.iter().step_by(DW_THIN).copied().collect();
        Self {
            name: name.to_string(),
            mean,
            sd,
            q025: q(0.025),
            q500: q(0.5),
            q975: q(0.975),
            durbin_watson: durbin_watson(&thinned).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub label: String,
    pub parameters: Vec<ParameterSummary>,
    pub acceptance_beta: f64,
    pub acceptance_c: f64,
    pub acceptance_gamma: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub seed: u64,
    pub lambda_used: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub draws: usize,
    pub cohorts: Vec<CohortSummary>,
}

pub(crate) fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.len();
    DMatrix::from_fn(p, p, |i, j| rows[i][j])
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Split the design (intercept dropped) into per-cohort blocks.
pub fn cohort_data(dataset: &CountDataset, design: &DesignMatrix) -> Result<Vec<CohortData>> {
    let x = design.matrix();
    let p = x.ncols() - 1;
    dataset
        .cohort_rows()
        .iter()
        .map(|rows| {
            let y: Vec<u64> = rows.iter().map(|&i| dataset.y()[i]).collect();
            let xr: Vec<Vec<f64>> = rows
                .iter()
                .map(|&i| (1..=p).map(|k| x[(i, k)]).collect())
                .collect();
            CohortData::new(&y, &xr, p)
        })
        .collect()
}

/// Run one chain per cohort for `config.iterations` sweeps.
///
/// With `lambda_t > 0` the error-prone column is first contaminated with
/// variance `lambda_t * sigma2_eps` from a stream derived from `seed`; the
/// contaminated column is held fixed for the whole chain. Each cohort's
/// stream is derived from `seed` and its label, so chains do not depend on
/// cohort order or thread count.
#[allow(clippy::too_many_arguments)]
pub fn run_chain(
    dataset: &CountDataset,
    design: &DesignMatrix,
    fixed: &FixedHypers,
    init: &ChainInit,
    lambda_t: f64,
    sigma2_eps: f64,
    config: &SamplerConfig,
    seed: u64,
) -> Result<Chain> {
    config.validate()?;
    fixed.validate()?;
    let p = design.ncols() - 1;
    if fixed.slopes() != p {
        return Err(Error::Validation(format!(
            "hyperparameters describe {} slopes, design has {p}",
            fixed.slopes()
        )));
    }
    if init.theta.len() != dataset.m() || init.delta.len() != dataset.m() {
        return Err(Error::Validation(
            "initial state must cover every cohort".into(),
        ));
    }
    let design = if lambda_t > 0.0 {
        let col = design.error_prone_column();
        let x: Vec<f64> = design.matrix().column(col).iter().copied().collect();
        let w = contaminate(
            &x,
            lambda_t,
            sigma2_eps,
            derive_seed(seed, &[CONTAMINATION_TAG]),
        )?;
        design.with_error_prone(&w)?
    } else {
        design.clone()
    };
    let blocks = cohort_data(dataset, &design)?;
    let n_total = dataset.n() as f64;
    let sigma_0 = fixed.sigma_0_matrix();
    let burn_in = config.burn_in();

    let cohorts = blocks
        .into_par_iter()
        .enumerate()
        .map(|(j, data)| {
            let label = dataset.cohort_labels()[j].clone();
            let proposal = if data.is_empty() {
                fixed.sigma_e_matrix()
            } else {
                &sigma_0 * (n_total / data.len() as f64)
            };
            let mut s = CohortSampler::new(
                data,
                init.theta[j].clone(),
                init.delta[j].clone(),
                &proposal,
                config.target_acceptance,
            )?;
            let mut rng = stream(seed, &[label_tag(&label)]);
            let keep = config.iterations - burn_in;
            let mut draws = Vec::with_capacity(keep);
            let mut hyper_draws = Vec::with_capacity(keep);
            if burn_in == 0 {
                s.freeze_adaptation();
            }
            for h in 1..=config.iterations {
                s.sweep(
                    fixed,
                    config.gamma_rate_source,
                    config.greedy_accept,
                    &mut rng,
                )?;
                if h == burn_in {
                    s.freeze_adaptation();
                }
                if h > burn_in {
                    draws.push(s.theta.clone());
                    hyper_draws.push(s.delta.clone());
                }
            }
            let mut warnings = Vec::new();
            for (block, sc) in [
                ("beta", &s.beta_scale),
                ("C", &s.c_scale),
                ("gamma", &s.gamma_scale),
            ] {
                if sc.stuck {
                    warnings.push(format!(
                        "cohort {label}: block {block} rejected {} consecutive proposals",
                        mh::STUCK_WINDOW
                    ));
                }
            }
            Ok(CohortChain {
                label,
                draws,
                hyper_draws,
                beta: (&s.beta_scale).into(),
                c: (&s.c_scale).into(),
                gamma: (&s.gamma_scale).into(),
                warnings,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Chain {
        slope_names: design.column_names()[1..].to_vec(),
        cohorts,
        seed,
        lambda_used: lambda_t,
        iterations: config.iterations,
        burn_in,
    })
}
