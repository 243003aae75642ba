//! One cohort's Gibbs/Metropolis update schedule.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use super::dist::{
    cholesky_with_jitter, gamma_draw, inverse_wishart_draw, mvn_draw, mvn_log_kernel,
    standard_normal_vec,
};
use super::mh::{mh_accept, AdaptiveScale};
use super::{FixedHypers, GammaRateSource, HierParams, HyperParams};
use crate::count_glm::{nb_kernel, CountHistogram};
use crate::error::{Error, Result};

/// Outcomes and slope covariates (no intercept column) of one cohort.
#[derive(Debug, Clone)]
pub struct CohortData {
    y: Vec<f64>,
    /// Row-major `n x p`.
    x: Vec<f64>,
    p: usize,
    hist: CountHistogram,
}

impl CohortData {
    pub fn new(y: &[u64], x_rows: &[Vec<f64>], p: usize) -> Result<Self> {
        if y.len() != x_rows.len() || x_rows.iter().any(|r| r.len() != p) {
            return Err(Error::Validation(
                "cohort outcome/covariate shape mismatch".into(),
            ));
        }
        Ok(Self {
            y: y.iter().map(|&v| v as f64).collect(),
            x: x_rows.iter().flatten().copied().collect(),
            p,
            hist: CountHistogram::new(y.iter().copied()),
        })
    }

    /// No records: the likelihood is constant and the blocks sample their priors.
    pub fn empty(p: usize) -> Self {
        Self {
            y: Vec::new(),
            x: Vec::new(),
            p,
            hist: CountHistogram::new(std::iter::empty()),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn slopes(&self) -> usize {
        self.p
    }

    /// `exp(x_i' beta)` per record.
    fn exp_linear(&self, beta: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.x
                .chunks_exact(self.p.max(1))
                .take(self.y.len())
                .map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp()),
        );
    }

    /// Dispersion-free part of the log-likelihood at means `c * exp_lin`.
    fn kernel(&self, exp_lin: &[f64], c: f64, gamma: f64) -> f64 {
        self.y
            .iter()
            .zip(exp_lin)
            .map(|(&y, &e)| nb_kernel(y, c * e, gamma))
            .sum()
    }

    /// Full NB log-likelihood of the cohort at `theta`.
    pub fn log_likelihood(&self, theta: &HierParams) -> f64 {
        let mut e = Vec::new();
        self.exp_linear(&theta.beta, &mut e);
        self.kernel(&e, theta.c, theta.gamma) + self.hist.ln_rising_sum(theta.gamma)
            - self.hist.ln_factorials()
    }
}

/// Slope covariance draw: `Lambda ~ IW(nu + P, tau Sigma_E + (beta - mu)(beta - mu)')`.
pub fn sample_lambda<R: Rng + ?Sized>(
    beta: &[f64],
    mu: &[f64],
    fixed: &FixedHypers,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = beta.len();
    let d = DVector::from_column_slice(beta) - DVector::from_column_slice(mu);
    let scale = fixed.sigma_e_matrix() * fixed.tau + &d * d.transpose();
    inverse_wishart_draw(fixed.nu + p as f64, &scale, rng)
}

/// Weights `(w_glm, w_beta)` of the slope-mean draw; they sum to one.
pub fn mu_weights(g: f64) -> (f64, f64) {
    let inv = 1.0 / g;
    (inv / (inv + 1.0), 1.0 / (inv + 1.0))
}

/// Slope mean draw: `mu ~ MVN(w_glm beta_glm + w_beta beta, Lambda / (1/g + 1))`.
pub fn sample_mu<R: Rng + ?Sized>(
    beta: &[f64],
    lambda: &DMatrix<f64>,
    fixed: &FixedHypers,
    beta_glm: &[f64],
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (w_glm, w_beta) = mu_weights(fixed.g);
    let mean =
        DVector::from_column_slice(beta_glm) * w_glm + DVector::from_column_slice(beta) * w_beta;
    mvn_draw(&mean, &(lambda / (1.0 / fixed.g + 1.0)), rng)
}

/// Intercept concentration: `k ~ Gamma(shape s, scale t)`.
pub fn sample_k<R: Rng + ?Sized>(fixed: &FixedHypers, rng: &mut R) -> Result<f64> {
    gamma_draw(fixed.s, fixed.t, rng)
}

/// Dispersion concentration: `a ~ Gamma(shape k + u, scale gamma_prev + v)`.
pub fn sample_a<R: Rng + ?Sized>(
    k: f64,
    gamma_prev: f64,
    fixed: &FixedHypers,
    rng: &mut R,
) -> Result<f64> {
    gamma_draw(k + fixed.u, gamma_prev + fixed.v, rng)
}

/// Rate of the running-mean Gamma prior: `shape * h / sum_{z<h} draw_z`,
/// giving prior mean equal to the running mean of past draws.
pub fn running_prior_rate(shape: f64, h: usize, running_sum: f64) -> f64 {
    shape * h as f64 / running_sum
}

/// Log density of `ln x` when `x ~ Gamma(shape, rate)`, up to a constant.
fn log_gamma_prior_on_log(ln_x: f64, shape: f64, rate: f64) -> f64 {
    shape * ln_x - rate * ln_x.exp()
}

/// Mutable per-cohort state with likelihood caches.
#[derive(Debug, Clone)]
pub struct CohortSampler {
    pub data: CohortData,
    pub theta: HierParams,
    pub delta: HyperParams,
    /// Sum of all past intercept draws, including the initial value.
    pub c_sum: f64,
    pub gamma_sum: f64,
    /// Number of terms in the running sums.
    pub h: usize,
    pub beta_scale: AdaptiveScale,
    pub c_scale: AdaptiveScale,
    pub gamma_scale: AdaptiveScale,
    beta_chol: DMatrix<f64>,
    exp_lin: Vec<f64>,
    /// Dispersion-free log-likelihood at the current state.
    kernel: f64,
    scratch: Vec<f64>,
}

impl CohortSampler {
    /// `proposal_cov` shapes the slope random walk; its overall size is then
    /// adapted.
    pub fn new(
        data: CohortData,
        theta: HierParams,
        delta: HyperParams,
        proposal_cov: &DMatrix<f64>,
        target: f64,
    ) -> Result<Self> {
        theta.validate()?;
        delta.validate()?;
        if theta.beta.len() != data.slopes() {
            return Err(Error::Validation(format!(
                "initial slopes have length {}, cohort has {} covariates",
                theta.beta.len(),
                data.slopes()
            )));
        }
        let p = data.slopes();
        let beta_chol = cholesky_with_jitter(proposal_cov)?.l();
        let n = data.len() as f64;
        let mut s = Self {
            beta_scale: AdaptiveScale::new(2.38 / (p.max(1) as f64).sqrt(), target),
            c_scale: AdaptiveScale::new(1.0 / (n + 1.0).sqrt(), target),
            gamma_scale: AdaptiveScale::new(1.0 / (n + 1.0).sqrt().min(4.0), target),
            c_sum: theta.c,
            gamma_sum: theta.gamma,
            h: 1,
            data,
            theta,
            delta,
            beta_chol,
            exp_lin: Vec::new(),
            kernel: 0.0,
            scratch: Vec::new(),
        };
        s.data.exp_linear(&s.theta.beta, &mut s.exp_lin);
        s.kernel = s.data.kernel(&s.exp_lin, s.theta.c, s.theta.gamma);
        Ok(s)
    }

    pub fn freeze_adaptation(&mut self) {
        self.beta_scale.freeze();
        self.c_scale.freeze();
        self.gamma_scale.freeze();
    }

    /// Random-walk Metropolis on the slopes under the
    /// `MVN(mu, Lambda)` prior.
    pub fn sample_beta_mh<R: Rng + ?Sized>(
        &mut self,
        lambda_chol: &Cholesky<f64, Dyn>,
        greedy: bool,
        rng: &mut R,
    ) -> bool {
        let p = self.data.slopes();
        let beta = DVector::from_column_slice(&self.theta.beta);
        let mu = DVector::from_column_slice(&self.delta.mu);
        let step = &self.beta_chol * standard_normal_vec(p, rng) * self.beta_scale.scale();
        let prop = &beta + step;
        self.data.exp_linear(prop.as_slice(), &mut self.scratch);
        let k_prop = self
            .data
            .kernel(&self.scratch, self.theta.c, self.theta.gamma);
        let log_ratio = (k_prop + mvn_log_kernel(&prop, &mu, lambda_chol))
            - (self.kernel + mvn_log_kernel(&beta, &mu, lambda_chol));
        let ok = k_prop.is_finite() && mh_accept(log_ratio, greedy, rng);
        if ok {
            self.theta.beta = prop.as_slice().to_vec();
            std::mem::swap(&mut self.exp_lin, &mut self.scratch);
            self.kernel = k_prop;
        }
        self.beta_scale.record(ok);
        ok
    }

    /// Metropolis on `ln C` under the running-mean Gamma prior
    /// with shape `k`.
    pub fn sample_c_mh<R: Rng + ?Sized>(&mut self, greedy: bool, rng: &mut R) -> bool {
        let rate = running_prior_rate(self.delta.k, self.h, self.c_sum);
        let ln_c = self.theta.c.ln();
        let ln_prop =
            ln_c + self.c_scale.scale() * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let c_prop = ln_prop.exp();
        let k_prop = self.data.kernel(&self.exp_lin, c_prop, self.theta.gamma);
        let log_ratio = (k_prop + log_gamma_prior_on_log(ln_prop, self.delta.k, rate))
            - (self.kernel + log_gamma_prior_on_log(ln_c, self.delta.k, rate));
        let ok = c_prop > 0.0
            && c_prop.is_finite()
            && k_prop.is_finite()
            && mh_accept(log_ratio, greedy, rng);
        if ok {
            self.theta.c = c_prop;
            self.kernel = k_prop;
        }
        self.c_scale.record(ok);
        ok
    }

    /// Metropolis on `ln gamma` under the running-mean Gamma prior
    /// with shape `a`.
    pub fn sample_gamma_mh<R: Rng + ?Sized>(
        &mut self,
        source: GammaRateSource,
        greedy: bool,
        rng: &mut R,
    ) -> bool {
        let sum = match source {
            GammaRateSource::DispersionSum => self.gamma_sum,
            GammaRateSource::InterceptSum => self.c_sum,
        };
        let rate = running_prior_rate(self.delta.a, self.h, sum);
        let g = self.theta.gamma;
        let ln_prop =
            g.ln() + self.gamma_scale.scale() * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let g_prop = ln_prop.exp();
        let k_prop = self.data.kernel(&self.exp_lin, self.theta.c, g_prop);
        let ll_prop = k_prop + self.data.hist.ln_rising_sum(g_prop);
        let ll_cur = self.kernel + self.data.hist.ln_rising_sum(g);
        let log_ratio = (ll_prop + log_gamma_prior_on_log(ln_prop, self.delta.a, rate))
            - (ll_cur + log_gamma_prior_on_log(g.ln(), self.delta.a, rate));
        let ok = g_prop > 0.0
            && g_prop.is_finite()
            && ll_prop.is_finite()
            && mh_accept(log_ratio, greedy, rng);
        if ok {
            self.theta.gamma = g_prop;
            self.kernel = k_prop;
        }
        self.gamma_scale.record(ok);
        ok
    }

    /// One full sweep over every block, then the running sums absorb the
    /// new intercept and dispersion.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        fixed: &FixedHypers,
        source: GammaRateSource,
        greedy: bool,
        rng: &mut R,
    ) -> Result<()> {
        let lambda = sample_lambda(&self.theta.beta, &self.delta.mu, fixed, rng)?;
        let lambda_chol = cholesky_with_jitter(&lambda)?;
        let mu = sample_mu(&self.theta.beta, &lambda, fixed, &fixed.beta_glm, rng)?;
        self.delta.lambda = super::matrix_rows(&lambda);
        self.delta.mu = mu.as_slice().to_vec();
        self.sample_beta_mh(&lambda_chol, greedy, rng);
        self.delta.k = sample_k(fixed, rng)?;
        self.delta.a = sample_a(self.delta.k, self.theta.gamma, fixed, rng)?;
        self.sample_c_mh(greedy, rng);
        self.sample_gamma_mh(source, greedy, rng);
        self.c_sum += self.theta.c;
        self.gamma_sum += self.theta.gamma;
        self.h += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn mu_weights_sum_to_one() {
        let (a, b) = mu_weights(1800.0);
        assert!((a + b - 1.0).abs() < 1e-15);
        assert!((a - 1.0 / 1801.0).abs() < 1e-15);
        assert!(mu_weights(1e4).0 < 1e-3);
    }

    #[test]
    fn running_rate_at_first_iteration() {
        assert_eq!(running_prior_rate(2.0, 1, 4.0), 0.5);
    }

    #[test]
    fn equal_beta_and_mu_reduce_scale_to_prior() {
        // With d = 0 the draw uses tau * Sigma_E; check the mean over draws.
        let fixed = FixedHypers::with_defaults(
            vec![0.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            100.0,
            1.0,
            1.0,
        )
        .unwrap();
        let mut rng = stream(5, &[]);
        let n = 20_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += sample_lambda(&[0.3, -0.2], &[0.3, -0.2], &fixed, &mut rng).unwrap();
        }
        acc /= n as f64;
        let df = fixed.nu + 2.0;
        let want = fixed.sigma_e_matrix() * fixed.tau / (df - 2.0 - 1.0);
        assert!((acc[(0, 0)] - want[(0, 0)]).abs() < 0.05 * want[(0, 0)]);
        assert!((acc[(1, 1)] - want[(1, 1)]).abs() < 0.05 * want[(1, 1)]);
    }

    #[test]
    fn gamma_blocks_reduce_to_exponential() {
        let mut fixed =
            FixedHypers::with_defaults(vec![0.0], vec![vec![1.0]], 10.0, 1.0, 1.0).unwrap();
        fixed.s = 1.0;
        let mut rng = stream(8, &[]);
        let n = 100_000;
        let mean_k: f64 = (0..n)
            .map(|_| sample_k(&fixed, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean_k - 1.0).abs() < 0.02);
        let mean_a: f64 = (0..n)
            .map(|_| sample_a(0.0, 0.0, &fixed, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean_a - 1.0).abs() < 0.02);
    }

    #[test]
    fn beta_proposal_equal_to_current_never_decreases_target() {
        let fixed =
            FixedHypers::with_defaults(vec![0.1], vec![vec![0.01]], 10.0, 1.0, 1.0).unwrap();
        let data = CohortData::new(&[1, 0, 3], &[vec![0.5], vec![-1.0], vec![2.0]], 1).unwrap();
        let theta = HierParams {
            beta: vec![0.1],
            c: 1.0,
            gamma: 1.0,
        };
        let delta = HyperParams::initial(&fixed);
        let mut s = CohortSampler::new(data, theta, delta, &DMatrix::identity(1, 1), 0.3).unwrap();
        let before = s.data.log_likelihood(&s.theta);
        s.beta_scale.log_scale = -700.0;
        let lambda = DMatrix::identity(1, 1);
        let chol = lambda.cholesky().unwrap();
        let mut rng = stream(1, &[]);
        assert!(s.sample_beta_mh(&chol, true, &mut rng));
        assert!((s.data.log_likelihood(&s.theta) - before).abs() < 1e-12);
    }
}
