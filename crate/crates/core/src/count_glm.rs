//! Negative binomial density and maximum-likelihood GLM fitting.
//!
//! The NB distribution is parameterised by its mean `eta` and dispersion
//! `gamma` with `Var(y) = eta + eta^2 / gamma`; `gamma -> inf` recovers the
//! Poisson.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::data::{CountDataset, DesignMatrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Mean/dispersion pair of a negative binomial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbParams<T> {
    eta: T,
    gamma: T,
}

impl<T: Real> NbParams<T> {
    pub fn new(eta: T, gamma: T) -> Result<Self> {
        if !(eta > T::zero() && eta.is_finite()) {
            return Err(Error::Domain(format!(
                "NB mean must be positive, got {eta}"
            )));
        }
        if !(gamma > T::zero() && gamma.is_finite()) {
            return Err(Error::Domain(format!(
                "NB dispersion must be positive, got {gamma}"
            )));
        }
        Ok(Self { eta, gamma })
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn variance(&self) -> T {
        self.eta + self.eta * self.eta / self.gamma
    }
}

/// `ln Gamma(y + gamma) - ln Gamma(gamma)`.
///
/// Small counts use the rising-factorial sum so huge dispersions do not lose
/// precision to cancellation.
pub fn ln_rising<T: Real>(gamma: T, y: u64) -> T {
    if y <= 64 {
        (0..y).fold(T::zero(), |acc, k| {
            acc + (gamma + T::from_u64(k).unwrap()).ln()
        })
    } else {
        (gamma + T::from_u64(y).unwrap()).ln_gamma() - gamma.ln_gamma()
    }
}

pub fn ln_factorial<T: Real>(y: u64) -> T {
    (T::from_u64(y).unwrap() + T::one()).ln_gamma()
}

/// Log probability mass of `y` under `NB(eta, gamma)`.
pub fn nb_logpmf<T: Real>(y: u64, params: &NbParams<T>) -> T {
    let NbParams { eta, gamma } = *params;
    let yf = T::from_u64(y).unwrap();
    let tail = if y == 0 {
        T::zero()
    } else {
        -yf * (gamma / eta).ln_1p()
    };
    ln_rising(gamma, y) - ln_factorial::<T>(y) - gamma * (eta / gamma).ln_1p() + tail
}

/// Log-likelihood contribution of one record without the `y`-only and
/// `gamma`-only normalising terms. `eta` may underflow to zero.
#[inline]
pub(crate) fn nb_kernel(y: f64, eta: f64, gamma: f64) -> f64 {
    let base = -gamma * (eta / gamma).ln_1p();
    if y == 0.0 {
        base
    } else {
        base - y * (gamma / eta).ln_1p()
    }
}

/// Method-of-moments dispersion `mean^2 / (var - mean)` using the sample
/// variance with divisor `n - 1`.
pub fn mom_dispersion<T: Real>(y: &[u64]) -> Result<T> {
    if y.len() < 2 {
        return Err(Error::Validation(
            "method-of-moments dispersion needs at least two counts".into(),
        ));
    }
    let n = T::from_count(y.len());
    let vals = y.iter().map(|&v| T::from_u64(v).unwrap());
    let mean = vals.clone().fold(T::zero(), |a, v| a + v) / n;
    let var = vals.fold(T::zero(), |a, v| a + (v - mean) * (v - mean)) / (n - T::one());
    mom_dispersion_from_moments(mean, var)
}

pub fn mom_dispersion_from_moments<T: Real>(mean: T, variance: T) -> Result<T> {
    if !(variance > mean) {
        return Err(Error::Underdispersion {
            mean: mean.to_f64().unwrap_or(f64::NAN),
            variance: variance.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(mean * mean / (variance - mean))
}

/// Distinct outcome values with multiplicities. Dispersion-only likelihood
/// terms are evaluated once per distinct value.
#[derive(Debug, Clone)]
pub(crate) struct CountHistogram {
    bins: Vec<(u64, f64)>,
    ln_factorials: f64,
}

impl CountHistogram {
    pub(crate) fn new(y: impl IntoIterator<Item = u64>) -> Self {
        let mut sorted: Vec<u64> = y.into_iter().collect();
        sorted.sort_unstable();
        let mut bins: Vec<(u64, f64)> = Vec::new();
        for v in sorted {
            match bins.last_mut() {
                Some((last, c)) if *last == v => *c += 1.0,
                _ => bins.push((v, 1.0)),
            }
        }
        let ln_factorials = bins.iter().map(|&(v, c)| c * ln_factorial::<f64>(v)).sum();
        Self {
            bins,
            ln_factorials,
        }
    }

    /// `sum_i ln Gamma(y_i + gamma) - ln Gamma(gamma)`.
    pub(crate) fn ln_rising_sum(&self, gamma: f64) -> f64 {
        self.bins
            .iter()
            .map(|&(v, c)| c * ln_rising(gamma, v))
            .sum()
    }

    /// `sum_i psi(y_i + gamma) - psi(gamma)`.
    pub(crate) fn digamma_diff_sum(&self, gamma: f64) -> f64 {
        self.bins
            .iter()
            .map(|&(v, c)| {
                let d = if v <= 64 {
                    (0..v).map(|k| 1.0 / (gamma + k as f64)).sum()
                } else {
                    digamma(gamma + v as f64) - digamma(gamma)
                };
                c * d
            })
            .sum()
    }

    pub(crate) fn ln_factorials(&self) -> f64 {
        self.ln_factorials
    }
}

/// Full NB log-likelihood of `y` at means `eta` and a common dispersion.
pub fn nb_loglik(y: &[u64], eta: &[f64], gamma: f64) -> f64 {
    let hist = CountHistogram::new(y.iter().copied());
    loglik_with(&hist, y, eta, gamma)
}

fn loglik_with(hist: &CountHistogram, y: &[u64], eta: &[f64], gamma: f64) -> f64 {
    let kernel: f64 = y
        .iter()
        .zip(eta)
        .map(|(&yi, &e)| nb_kernel(yi as f64, e, gamma))
        .sum();
    kernel + hist.ln_rising_sum(gamma) - hist.ln_factorials()
}

/// Saturated NB log-likelihood: every mean set to its own count, with zero
/// counts evaluated at `eta = 1e-8`.
pub fn nb_saturated_loglik(y: &[u64], gamma: f64) -> f64 {
    let eta: Vec<f64> = y.iter().map(|&v| saturated_mean(v)).collect();
    nb_loglik(y, &eta, gamma)
}

pub(crate) fn saturated_mean(y: u64) -> f64 {
    if y == 0 {
        SATURATED_ZERO_MEAN
    } else {
        y as f64
    }
}

pub(crate) const SATURATED_ZERO_MEAN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    pub max_iter: usize,
    pub gradient_tol: f64,
    /// Root-search tolerance on `ln gamma`.
    pub gamma_tol: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            gradient_tol: 1e-6,
            gamma_tol: 1e-8,
            gamma_min: 1e-6,
            gamma_max: 1e8,
        }
    }
}

/// Maximum-likelihood NB regression result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub column_names: Vec<String>,
    pub beta_hat: Vec<f64>,
    pub gamma_hat: f64,
    /// Pearson dispersion estimate.
    pub sigma2_hat: f64,
    /// `sigma2_hat * (X' W X)^-1` at the final iterate.
    pub cov_beta: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub deviance: f64,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after every outer iteration.
    pub loglik_trace: Vec<f64>,
}

impl GlmFit {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let k = self.beta_hat.len();
        DMatrix::from_fn(k, k, |i, j| self.cov_beta[i][j])
    }

    /// Predicted means `exp(X beta)`.
    pub fn predict(&self, design: &DesignMatrix) -> Vec<f64> {
        predict_means(design.matrix(), &self.beta_hat)
    }
}

pub fn predict_means(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    let b = DVector::from_column_slice(beta);
    (x * b).iter().map(|v| v.exp()).collect()
}

pub fn fit_nb_glm(dataset: &CountDataset, design: &DesignMatrix) -> Result<GlmFit> {
    fit_nb_glm_with(dataset.y(), design, &GlmOptions::default())
}

/// IRLS for the regression coefficients alternated with a root search of the
/// dispersion score in `ln gamma`.
pub fn fit_nb_glm_with(y: &[u64], design: &DesignMatrix, opts: &GlmOptions) -> Result<GlmFit> {
    let x = design.matrix();
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::Validation(format!(
            "outcome has {} entries, design has {n} rows",
            y.len()
        )));
    }
    check_rank(x)?;
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let hist = CountHistogram::new(y.iter().copied());
    let ybar = yf.iter().sum::<f64>() / n as f64;
    if ybar <= 0.0 {
        return Err(Error::Numerical(
            "all counts are zero; the NB mean is not estimable".into(),
        ));
    }

    let mut beta = DVector::zeros(k);
    beta[0] = ybar.ln();
    let mut gamma = mom_dispersion::<f64>(y)
        .unwrap_or(opts.gamma_max)
        .clamp(opts.gamma_min, opts.gamma_max);

    let eta_of = |b: &DVector<f64>| -> Vec<f64> { (x * b).iter().map(|v| v.exp()).collect() };
    let mut eta = eta_of(&beta);
    let mut ll = loglik_with(&hist, y, &eta, gamma);
    let mut trace = vec![ll];
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;

        // Fisher scoring step for beta at fixed gamma, halved until the
        // likelihood does not decrease beyond its rounding error.
        let (info, score) = information_and_score(x, &yf, &eta, gamma);
        let step = info
            .cholesky()
            .ok_or_else(|| Error::SingularDesign("weighted information is singular".into()))?
            .solve(&score);
        let mut t = 1.0;
        for _ in 0..60 {
            let cand = &beta + &step * t;
            let cand_eta = eta_of(&cand);
            let cand_ll = loglik_with(&hist, y, &cand_eta, gamma);
            if cand_ll.is_finite() && cand_ll >= ll - roundoff(ll) {
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
        }

        let old_gamma = gamma;
        let ln_g = maximize_log_dispersion(
            |lg| dispersion_score(&hist, &yf, &eta, lg.exp()),
            gamma.ln(),
            opts.gamma_min.ln(),
            opts.gamma_max.ln(),
            opts.gamma_tol,
        );
        let cand_ll = loglik_with(&hist, y, &eta, ln_g.exp());
        if cand_ll >= ll - roundoff(ll) {
            gamma = ln_g.exp();
            ll = cand_ll;
        }
        debug_assert!(ll >= *trace.last().unwrap() - roundoff(ll));
        trace.push(ll);

        grad_norm = information_and_score(x, &yf, &eta, gamma).1.norm();
        if grad_norm < opts.gradient_tol && (gamma.ln() - old_gamma.ln()).abs() < 1e-6 {
            converged = true;
            break;
        }
    }

    let (info, _) = information_and_score(x, &yf, &eta, gamma);
    let info_inv = info
        .try_inverse()
        .ok_or_else(|| Error::SingularDesign("weighted information is singular".into()))?;
    let pearson: f64 = yf
        .iter()
        .zip(&eta)
        .map(|(&yi, &e)| (yi - e).powi(2) / (e + e * e / gamma))
        .sum();
    let sigma2_hat = pearson / (n.saturating_sub(k).max(1)) as f64;
    let cov = info_inv * sigma2_hat;
    let cov = (&cov + cov.transpose()) * 0.5;
    let deviance = 2.0 * (nb_saturated_loglik(y, gamma) - ll);
    let fit = GlmFit {
        column_names: design.column_names(),
        beta_hat: beta.iter().copied().collect(),
        gamma_hat: gamma,
        sigma2_hat,
        std_errors: (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        cov_beta: (0..k)
            .map(|i| (0..k).map(|j| cov[(i, j)]).collect())
            .collect(),
        deviance,
        log_likelihood: ll,
        gradient_norm: grad_norm,
        iterations,
        converged,
        loglik_trace: trace,
    };
    if converged {
        Ok(fit)
    } else {
        Err(Error::Convergence {
            iterations,
            gradient_norm: grad_norm,
            last: Box::new(fit),
        })
    }
}

/// Rounding allowance of a log-likelihood value.
pub(crate) fn roundoff(ll: f64) -> f64 {
    64.0 * f64::EPSILON * ll.abs().max(1.0)
}

fn information_and_score(
    x: &DMatrix<f64>,
    y: &[f64],
    eta: &[f64],
    gamma: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let k = x.ncols();
    let mut info = DMatrix::zeros(k, k);
    let mut score = DVector::zeros(k);
    for (i, (&yi, &e)) in y.iter().zip(eta).enumerate() {
        let denom = 1.0 + e / gamma;
        let w = e / denom;
        let r = (yi - e) / denom;
        for a in 0..k {
            let xa = x[(i, a)];
            score[a] += xa * r;
            for b in 0..=a {
                info[(a, b)] += w * xa * x[(i, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    (info, score)
}

fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    let k = x.ncols();
    if x.nrows() < k {
        return Err(Error::SingularDesign(format!(
            "{} rows for {k} columns",
            x.nrows()
        )));
    }
    let gram = x.transpose() * x;
    let scale: Vec<f64> = (0..k).map(|i| gram[(i, i)].sqrt()).collect();
    if let Some(i) = scale.iter().position(|&s| s == 0.0) {
        return Err(Error::SingularDesign(format!(
            "column {i} is identically zero"
        )));
    }
    let corr = DMatrix::from_fn(k, k, |i, j| gram[(i, j)] / (scale[i] * scale[j]));
    let eig = corr.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= max * 1e-12 {
        return Err(Error::SingularDesign("design columns are collinear".into()));
    }
    Ok(())
}

/// Derivative of the NB log-likelihood with respect to `ln gamma`.
fn dispersion_score(hist: &CountHistogram, y: &[f64], eta: &[f64], gamma: f64) -> f64 {
    let rest: f64 = y
        .iter()
        .zip(eta)
        .map(|(&yi, &e)| (e / gamma).ln_1p() + (yi - e) / (gamma + e))
        .sum();
    gamma * (hist.digamma_diff_sum(gamma) - rest)
}

/// Root of a decreasing-through-zero score on `[lo, hi]`, starting from `s0`:
/// bracket by doubling steps, then refine with the Illinois false-position
/// rule until the bracket is narrower than `tol`. A score that keeps its sign
/// up to a boundary returns that boundary.
pub fn maximize_log_dispersion<F: Fn(f64) -> f64>(
    score: F,
    s0: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> f64 {
    let s0 = s0.clamp(lo, hi);
    let f0 = score(s0);
    if f0 == 0.0 || !f0.is_finite() {
        return s0;
    }
    let dir = f0.signum();
    let (mut a, mut fa) = (s0, f0);
    let mut step = 0.25;
    let (mut b, mut fb) = loop {
        let b = (a + dir * step).clamp(lo, hi);
        let fb = score(b);
        if !fb.is_finite() {
            return a;
        }
        if fb.signum() != dir {
            break (b, fb);
        }
        if b == lo || b == hi {
            return b;
        }
        a = b;
        fa = fb;
        step *= 2.0;
    };
    for _ in 0..200 {
        if (b - a).abs() < tol || fb == 0.0 {
            break;
        }
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = score(c);
        if fc * fb < 0.0 {
            a = b;
            fa = fb;
        } else {
            fa *= 0.5;
        }
        b = c;
        fb = fc;
    }
    b
}
