//! Simulation-extrapolation over a contamination grid.
//!
//! Any estimator mapping a dataset to a parameter vector can be plugged in.
//! For every grid level `lambda_t` the error-prone covariate is contaminated
//! `B` times with extra noise of variance `lambda_t * sigma2_eps`, the
//! estimates are averaged, and a polynomial in `lambda` fitted to the averages
//! is evaluated at `lambda = -1`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CountDataset;
use crate::error::{Error, Result};
use crate::measurement::contaminate;
use crate::rng::derive_seed;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Extrapolant {
    Linear,
    #[default]
    Quadratic,
}

impl Extrapolant {
    pub fn degree(self) -> usize {
        match self {
            Extrapolant::Linear => 1,
            Extrapolant::Quadratic => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimexConfig {
    /// Strictly increasing, starting at 0.
    pub lambda_grid: Vec<f64>,
    /// Simulations per grid level (`B`).
    pub replicates: usize,
    pub sigma2_eps: f64,
    pub extrapolant: Extrapolant,
    pub seed: u64,
}

impl SimexConfig {
    pub fn new(sigma2_eps: f64, seed: u64) -> Self {
        Self {
            lambda_grid: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            replicates: 100,
            sigma2_eps,
            extrapolant: Extrapolant::Quadratic,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.lambda_grid;
        if g.first() != Some(&0.0) {
            return Err(Error::Config("lambda grid must start at 0".into()));
        }
        if g.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "lambda grid must be finite and strictly increasing".into(),
            ));
        }
        if g.len() < self.extrapolant.degree() + 1 {
            return Err(Error::Config(format!(
                "{} grid points cannot support a degree-{} extrapolant",
                g.len(),
                self.extrapolant.degree()
            )));
        }
        if self.replicates == 0 {
            return Err(Error::Config(
                "at least one simulation per level is required".into(),
            ));
        }
        if !(self.sigma2_eps >= 0.0) || !self.sigma2_eps.is_finite() {
            return Err(Error::Config(format!(
                "error variance must be non-negative, got {}",
                self.sigma2_eps
            )));
        }
        Ok(())
    }

    /// Seed used to contaminate cell `(level, replicate)`.
    pub fn contamination_seed(&self, level: usize, replicate: usize) -> u64 {
        derive_seed(self.seed, &[level as u64, replicate as u64, 0])
    }

    /// Seed handed to the estimator for cell `(level, replicate)`.
    pub fn estimator_seed(&self, level: usize, replicate: usize) -> u64 {
        derive_seed(self.seed, &[level as u64, replicate as u64, 1])
    }

    /// Dataset with the error-prone covariate contaminated for one cell.
    pub fn contaminated(
        &self,
        dataset: &CountDataset,
        level: usize,
        replicate: usize,
    ) -> Result<CountDataset> {
        let w = contaminate(
            dataset.error_prone_values(),
            self.lambda_grid[level],
            self.sigma2_eps,
            self.contamination_seed(level, replicate),
        )?;
        dataset.with_error_prone(w)
    }
}

/// Least-squares polynomial fit evaluated at a target level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation<T> {
    pub value: T,
    /// Ascending powers of `lambda`.
    pub coefficients: Vec<T>,
    /// Residual sum of squares.
    pub residual: T,
}

/// Fit a degree-`degree` polynomial to `(lambda, value)` points and evaluate
/// it at `lambda = -1`.
pub fn extrapolate<T: Real>(points: &[(T, T)], degree: usize) -> Result<Extrapolation<T>> {
    extrapolate_to(points, degree, -T::one())
}

pub fn extrapolate_to<T: Real>(
    points: &[(T, T)],
    degree: usize,
    target: T,
) -> Result<Extrapolation<T>> {
    if degree == 0 || degree > 2 {
        return Err(Error::Parameter(format!(
            "extrapolant degree must be 1 or 2, got {degree}"
        )));
    }
    let k = degree + 1;
    let mut distinct: Vec<T> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite levels"));
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::SingularFit(format!(
            "{} distinct levels for {k} coefficients",
            distinct.len()
        )));
    }

    // Modified Gram-Schmidt QR of the Vandermonde matrix.
    let n = points.len();
    let mut q: Vec<Vec<T>> = (0..k)
        .map(|j| points.iter().map(|p| p.0.powi(j as i32)).collect())
        .collect();
    let mut r = vec![vec![T::zero(); k]; k];
    for j in 0..k {
        for i in 0..j {
            let dot = (0..n).fold(T::zero(), |a, t| a + q[i][t] * q[j][t]);
            r[i][j] = dot;
            for t in 0..n {
                let qi = q[i][t];
                q[j][t] = q[j][t] - dot * qi;
            }
        }
        let norm = q[j].iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        let scale = points
            .iter()
            .fold(T::one(), |a, p| a.max(p.0.abs().powi(j as i32)));
        if !(norm > T::epsilon() * T::lit(64.0) * scale * T::from_count(n).sqrt()) {
            return Err(Error::SingularFit(
                "Vandermonde matrix is rank deficient".into(),
            ));
        }
        r[j][j] = norm;
        for t in 0..n {
            q[j][t] = q[j][t] / norm;
        }
    }
    let qtb: Vec<T> = (0..k)
        .map(|j| (0..n).fold(T::zero(), |a, t| a + q[j][t] * points[t].1))
        .collect();
    let mut coef = vec![T::zero(); k];
    for j in (0..k).rev() {
        let s = ((j + 1)..k).fold(qtb[j], |a, i| a - r[j][i] * coef[i]);
        coef[j] = s / r[j][j];
    }
    let eval = |x: T| coef.iter().rev().fold(T::zero(), |a, &c| a * x + c);
    let residual = points
        .iter()
        .fold(T::zero(), |a, &(x, v)| a + (v - eval(x)) * (v - eval(x)));
    Ok(Extrapolation {
        value: eval(target),
        coefficients: coef,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimexPoint {
    pub lambda: f64,
    pub mean: Vec<f64>,
    /// Spread of the `B` estimates at this level.
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimexTrace {
    pub parameter_names: Vec<String>,
    pub points: Vec<SimexPoint>,
    pub extrapolated: Vec<f64>,
    pub fit_coeffs: Vec<Vec<f64>>,
    pub fit_residuals: Vec<f64>,
    /// Leave-one-simulation-out jackknife standard error of the extrapolated
    /// value; absent when `B = 1`.
    pub jackknife_se: Option<Vec<f64>>,
    pub replicates: usize,
    pub sigma2_eps: f64,
    pub extrapolant: Extrapolant,
}

impl SimexTrace {
    /// The uncontaminated (`lambda = 0`) average estimate.
    pub fn naive(&self) -> &[f64] {
        &self.points[0].mean
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        if names.len() == self.extrapolated.len() {
            self.parameter_names = names;
        }
        self
    }

    /// Long-format CSV: `lambda,parameter,mean,sd`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lambda", "parameter", "mean", "sd"])?;
        for p in &self.points {
            for (k, name) in self.parameter_names.iter().enumerate() {
                w.write_record([
                    p.lambda.to_string(),
                    name.clone(),
                    p.mean[k].to_string(),
                    p.sd[k].to_string(),
                ])?;
            }
        }
        for (k, name) in self.parameter_names.iter().enumerate() {
            w.write_record([
                "-1".to_string(),
                name.clone(),
                self.extrapolated[k].to_string(),
                self.jackknife_se
                    .as_ref()
                    .map_or(String::new(), |se| se[k].to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run the estimator over the contamination grid and extrapolate.
///
/// Every `(level, replicate)` cell draws its contamination and estimator
/// seeds from `config.seed`, so the trace does not depend on thread count.
pub fn run_simex<E>(
    estimator: E,
    dataset: &CountDataset,
    config: &SimexConfig,
) -> Result<SimexTrace>
where
    E: Fn(&CountDataset, u64) -> Result<Vec<f64>> + Sync,
{
    config.validate()?;
    let levels = config.lambda_grid.len();
    let b = config.replicates;
    let results: Vec<Result<Vec<f64>>> = (0..levels * b)
        .into_par_iter()
        .map(|cell| {
            let (t, r) = (cell / b, cell % b);
            let wrap = |e: Error| Error::Estimator {
                lambda: config.lambda_grid[t],
                replicate: r,
                source: Box::new(e),
            };
            let data = config.contaminated(dataset, t, r).map_err(wrap)?;
            estimator(&data, config.estimator_seed(t, r)).map_err(wrap)
        })
        .collect();
    let estimates = results.into_iter().collect::<Result<Vec<_>>>()?;
    aggregate(config, &estimates)
}

/// Average, extrapolate and jackknife a full grid of estimates laid out as
/// `estimates[level * B + replicate]`.
pub fn aggregate(config: &SimexConfig, estimates: &[Vec<f64>]) -> Result<SimexTrace> {
    config.validate()?;
    let levels = config.lambda_grid.len();
    let b = config.replicates;
    if estimates.len() != levels * b {
        return Err(Error::Config(format!(
            "expected {} SIMEX estimates, got {}",
            levels * b,
            estimates.len()
        )));
    }
    let dim = estimates[0].len();
    if estimates.iter().any(|e| e.len() != dim) {
        return Err(Error::Numerical(
            "estimator returned vectors of differing length".into(),
        ));
    }
    // estimates[t * b + r][k]
    let level_means = |skip: Option<usize>| -> Vec<Vec<f64>> {
        (0..levels)
            .map(|t| {
                let rows: Vec<&Vec<f64>> = (0..b)
                    .filter(|&r| Some(r) != skip)
                    .map(|r| &estimates[t * b + r])
                    .collect();
                (0..dim)
                    .map(|k| rows.iter().map(|e| e[k]).sum::<f64>() / rows.len() as f64)
                    .collect()
            })
            .collect()
    };
    let means = level_means(None);
    let degree = config.extrapolant.degree();
    let fit_all = |means: &[Vec<f64>]| -> Result<Vec<Extrapolation<f64>>> {
        (0..dim)
            .map(|k| {
                let pts: Vec<(f64, f64)> = config
                    .lambda_grid
                    .iter()
                    .zip(means)
                    .map(|(&l, m)| (l, m[k]))
                    .collect();
                extrapolate(&pts, degree)
            })
            .collect()
    };
    let fits = fit_all(&means)?;

    let jackknife_se = if b >= 2 {
        let loo: Vec<Vec<f64>> = (0..b)
            .map(|skip| {
                fit_all(&level_means(Some(skip))).map(|f| f.into_iter().map(|e| e.value).collect())
            })
            .collect::<Result<_>>()?;
        Some(
            (0..dim)
                .map(|k| {
                    let avg = loo.iter().map(|v| v[k]).sum::<f64>() / b as f64;
                    let ss: f64 = loo.iter().map(|v| (v[k] - avg).powi(2)).sum();
                    ((b as f64 - 1.0) / b as f64 * ss).sqrt()
                })
                .collect(),
        )
    } else {
        None
    };

    let points = (0..levels)
        .map(|t| {
            let sd = (0..dim)
                .map(|k| {
                    if b < 2 {
                        0.0
                    } else {
                        let ss: f64 = (0..b)
                            .map(|r| (estimates[t * b + r][k] - means[t][k]).powi(2))
                            .sum();
                        (ss / (b - 1) as f64).sqrt()
                    }
                })
                .collect();
            SimexPoint {
                lambda: config.lambda_grid[t],
                mean: means[t].clone(),
                sd,
            }
        })
        .collect();

    Ok(SimexTrace {
        parameter_names: (0..dim).map(|k| format!("theta[{k}]")).collect(),
        points,
        extrapolated: fits.iter().map(|f| f.value).collect(),
        fit_coeffs: fits.iter().map(|f| f.coefficients.clone()).collect(),
        fit_residuals: fits.iter().map(|f| f.residual).collect(),
        jackknife_se,
        replicates: b,
        sigma2_eps: config.sigma2_eps,
        extrapolant: config.extrapolant,
    })
}
