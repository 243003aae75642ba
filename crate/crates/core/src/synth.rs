//! Seeded hierarchical NB data with known cohort parameters and a known
//! contaminated covariate.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CountDataset, Covariate};
use crate::error::{Error, Result};
use crate::rng::stream;

const COHORT_TAG: u64 = 1;
const RECORD_TAG: u64 = 2;

/// Generating distribution. `(ln C_j, beta_j)` is bivariate normal with
/// correlation `rho`; `ln gamma_j` is normal; `U ~ N(u_mean, u_sd^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSpec {
    pub log_c_mean: f64,
    pub log_c_sd: f64,
    pub beta_mean: f64,
    pub beta_sd: f64,
    pub rho: f64,
    pub log_gamma_mean: f64,
    pub log_gamma_sd: f64,
    pub u_mean: f64,
    pub u_sd: f64,
    pub sigma2_eps: f64,
}

impl Default for TruthSpec {
    fn default() -> Self {
        Self {
            log_c_mean: 1.0,
            log_c_sd: 0.3,
            beta_mean: 0.5,
            beta_sd: 0.15,
            rho: -0.7,
            log_gamma_mean: 0.0,
            log_gamma_sd: 0.2,
            u_mean: 0.0,
            u_sd: 1.0,
            sigma2_eps: 1.0,
        }
    }
}

impl TruthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Parameter(format!(
                "rho must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        let finite = [
            self.log_c_mean,
            self.log_c_sd,
            self.beta_mean,
            self.beta_sd,
            self.log_gamma_mean,
            self.log_gamma_sd,
            self.u_mean,
            self.u_sd,
            self.sigma2_eps,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("truth spec has a non-finite entry".into()));
        }
        for (name, v) in [
            ("log_c_sd", self.log_c_sd),
            ("beta_sd", self.beta_sd),
            ("log_gamma_sd", self.log_gamma_sd),
            ("u_sd", self.u_sd),
            ("sigma2_eps", self.sigma2_eps),
        ] {
            if v < 0.0 {
                return Err(Error::Parameter(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTruth {
    pub label: String,
    pub c: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: TruthSpec,
    pub cohorts: Vec<CohortTruth>,
    /// Latent covariate, one per record.
    pub u: Vec<f64>,
    pub sigma2_eps: f64,
    pub seed: u64,
}

impl GroundTruth {
    /// Same records with the latent covariate in place of the observed one.
    pub fn clean_dataset(&self, observed: &CountDataset) -> Result<CountDataset> {
        observed.with_error_prone(self.u.clone())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

/// `Gamma(shape gamma, scale eta/gamma)`-mixed Poisson, i.e. `NB(eta, gamma)`.
pub fn nb_draw<R: Rng + ?Sized>(eta: f64, gamma: f64, rng: &mut R) -> Result<u64> {
    let mix = Gamma::new(gamma, eta / gamma)
        .map_err(|e| Error::Parameter(format!("NB(eta={eta}, gamma={gamma}): {e}")))?
        .sample(rng);
    if !(mix > 0.0) {
        return Ok(0);
    }
    let y = Poisson::new(mix)
        .map_err(|e| Error::Parameter(format!("Poisson({mix}): {e}")))?
        .sample(rng);
    Ok(y as u64)
}

/// `m` cohorts of `n_per` records with covariate `x = U + eps`; outcomes use
/// the latent `U`.
pub fn generate(
    m: usize,
    n_per: usize,
    spec: &TruthSpec,
    seed: u64,
) -> Result<(CountDataset, GroundTruth)> {
    spec.validate()?;
    if m == 0 || n_per == 0 {
        return Err(Error::Parameter(format!(
            "need at least one cohort and one record per cohort (m={m}, n_per={n_per})"
        )));
    }
    let width = (m - 1).to_string().len().max(2);
    let mut rng = stream(seed, &[COHORT_TAG]);
    let mut cohorts = Vec::with_capacity(m);
    for j in 0..m {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let z3: f64 = StandardNormal.sample(&mut rng);
        let log_c = spec.log_c_mean + spec.log_c_sd * z1;
        let beta = spec.beta_mean
            + spec.beta_sd * (spec.rho * z1 + (1.0 - spec.rho * spec.rho).sqrt() * z2);
        cohorts.push(CohortTruth {
            label: format!("c{j:0width$}"),
            c: log_c.exp(),
            beta,
            gamma: (spec.log_gamma_mean + spec.log_gamma_sd * z3).exp(),
        });
    }
    let eps_sd = spec.sigma2_eps.sqrt();
    let mut u = Vec::with_capacity(m * n_per);
    let mut x = Vec::with_capacity(m * n_per);
    let mut y = Vec::with_capacity(m * n_per);
    let mut labels = Vec::with_capacity(m * n_per);
    for (j, ct) in cohorts.iter().enumerate() {
        let mut rng = stream(seed, &[RECORD_TAG, j as u64]);
        for _ in 0..n_per {
            let ui = spec.u_mean + spec.u_sd * rng.sample::<f64, _>(StandardNormal);
            let xi = ui + eps_sd * rng.sample::<f64, _>(StandardNormal);
            y.push(nb_draw(ct.c * (ct.beta * ui).exp(), ct.gamma, &mut rng)?);
            u.push(ui);
            x.push(xi);
            labels.push(ct.label.clone());
        }
    }
    let ds = CountDataset::from_labels(
        y,
        vec![Covariate::Numeric {
            name: "x".into(),
            values: x,
        }],
        &labels,
        0,
    )?;
    Ok((
        ds,
        GroundTruth {
            spec: spec.clone(),
            cohorts,
            u,
            sigma2_eps: spec.sigma2_eps,
            seed,
        },
    ))
}
