//! Predictive and diagnostic metrics.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::count_glm::{nb_logpmf, saturated_mean, GlmFit, NbParams};
use crate::data::{CountDataset, DesignMatrix};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::sampler::dist::mvn_draw;
use crate::sampler::Chain;

/// Log-likelihood of every data point under every posterior draw,
/// `values[draw][point]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikMatrix {
    values: Vec<Vec<f64>>,
}

impl LogLikMatrix {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Undefined("no posterior draws".into()));
        }
        let n = values[0].len();
        if values.iter().any(|r| r.len() != n) {
            return Err(Error::Validation(
                "draws cover different numbers of points".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn draws(&self) -> usize {
        self.values.len()
    }

    pub fn points(&self) -> usize {
        self.values[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    fn column(&self, i: usize) -> impl Iterator<Item = f64> + Clone + '_ {
        self.values.iter().map(move |r| r[i])
    }
}

/// `log(1/J sum_j exp(ll_j))` by log-sum-exp.
fn log_mean_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let (sum, count) = vals.fold((0.0, 0usize), |(s, c), v| (s + (v - max).exp(), c + 1));
    max + (sum / count as f64).ln()
}

/// Log pointwise predictive density `sum_i log(1/J sum_j L_ij)`.
pub fn lppd(ll: &LogLikMatrix) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..ll.points() {
        let v = log_mean_exp(ll.column(i));
        if v == f64::NEG_INFINITY {
            return Err(Error::Undefined(format!(
                "point {i} has zero likelihood under every draw; lppd is -inf"
            )));
        }
        total += v;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub lppd: f64,
    pub penalty: f64,
    pub waic: f64,
    pub per_point_penalty: Vec<f64>,
}

/// WAIC with the penalty `sum_i Var_j(log L_ij)` using the `J - 1` divisor.
pub fn waic(ll: &LogLikMatrix) -> Result<Waic> {
    let j = ll.draws();
    if j < 2 {
        return Err(Error::Undefined(format!(
            "WAIC penalty needs at least 2 draws, got {j}"
        )));
    }
    let lppd = lppd(ll)?;
    let per_point_penalty: Vec<f64> = (0..ll.points())
        .map(|i| {
            let mean = ll.column(i).sum::<f64>() / j as f64;
            ll.column(i).map(|v| (v - mean).powi(2)).sum::<f64>() / (j - 1) as f64
        })
        .collect();
    let penalty: f64 = per_point_penalty.iter().sum();
    Ok(Waic {
        lppd,
        penalty,
        waic: -2.0 * (lppd - penalty),
        per_point_penalty,
    })
}

/// `sum_t (e_t - e_{t-1})^2 / sum_t e_t^2` with `e` the mean-centred trace.
pub fn durbin_watson(trace: &[f64]) -> Result<f64> {
    if trace.len() < 3 {
        return Err(Error::Undefined(format!(
            "Durbin-Watson needs at least 3 values, got {}",
            trace.len()
        )));
    }
    let mean = trace.iter().sum::<f64>() / trace.len() as f64;
    let e: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let den: f64 = e.iter().map(|v| v * v).sum();
    if !(den > 0.0) {
        return Err(Error::Undefined("trace has zero variance".into()));
    }
    let num: f64 = e.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    Ok(num / den)
}

/// Mean of `(log(1 + yhat) - log(1 + y))^2`.
pub fn msle(predicted: &[f64], observed: &[u64]) -> Result<f64> {
    if predicted.len() != observed.len() || predicted.is_empty() {
        return Err(Error::Validation(
            "predictions and observations differ in length".into(),
        ));
    }
    if let Some(i) = predicted.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::Domain(format!(
            "prediction {i} is not positive: {}",
            predicted[i]
        )));
    }
    let s: f64 = predicted
        .iter()
        .zip(observed)
        .map(|(&p, &y)| (p.ln_1p() - (y as f64).ln_1p()).powi(2))
        .sum();
    Ok(s / predicted.len() as f64)
}

/// `2 (l_saturated - l_model) / phi` under NB with per-point dispersion.
pub fn scaled_deviance(y: &[u64], eta: &[f64], gamma: &[f64], phi: f64) -> Result<f64> {
    if y.len() != eta.len() || y.len() != gamma.len() {
        return Err(Error::Validation("deviance inputs differ in length".into()));
    }
    if !(phi > 0.0) {
        return Err(Error::Domain(format!(
            "dispersion scale must be positive, got {phi}"
        )));
    }
    let mut dev = 0.0;
    for ((&yi, &e), &g) in y.iter().zip(eta).zip(gamma) {
        let model = nb_logpmf(yi, &NbParams::new(e, g)?);
        let sat = nb_logpmf(yi, &NbParams::new(saturated_mean(yi), g)?);
        dev += sat - model;
    }
    Ok(2.0 * dev / phi)
}

/// Point predictions and plug-in dispersions for each data point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPredictions {
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_points: usize,
    pub n_draws: usize,
    pub lppd: f64,
    pub waic: f64,
    pub penalty: f64,
    pub per_point_penalty: Vec<f64>,
    pub scaled_deviance: f64,
    pub msle: f64,
    /// Durbin-Watson statistic per parameter trace, keyed by
    /// `cohort/parameter`.
    pub dw: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn build(ll: &LogLikMatrix, y: &[u64], pred: &PointPredictions) -> Result<Self> {
        let w = waic(ll)?;
        Ok(Self {
            n_points: ll.points(),
            n_draws: ll.draws(),
            lppd: w.lppd,
            waic: w.waic,
            penalty: w.penalty,
            per_point_penalty: w.per_point_penalty,
            scaled_deviance: scaled_deviance(y, &pred.eta, &pred.gamma, 1.0)?,
            msle: msle(&pred.eta, y)?,
            dw: BTreeMap::new(),
        })
    }

    /// `index,penalty` rows.
    pub fn write_penalty_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "penalty"])?;
        for (i, p) in self.per_point_penalty.iter().enumerate() {
            w.write_record([i.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Map each row of `dataset` to the chain cohort with the same label.
fn chain_cohort_index(chain: &Chain, dataset: &CountDataset) -> Result<Vec<usize>> {
    let idx: BTreeMap<&str, usize> = chain
        .cohorts
        .iter()
        .enumerate()
        .map(|(j, c)| (c.label.as_str(), j))
        .collect();
    let per_label = dataset
        .cohort_labels()
        .iter()
        .map(|l| {
            idx.get(l.as_str())
                .copied()
                .ok_or_else(|| Error::Validation(format!("cohort `{l}` has no posterior draws")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(dataset.cohort().iter().map(|&c| per_label[c]).collect())
}

fn slope_rows(design: &DesignMatrix) -> Vec<Vec<f64>> {
    let x = design.matrix();
    (0..x.nrows())
        .map(|i| (1..x.ncols()).map(|k| x[(i, k)]).collect())
        .collect()
}

/// Pointwise log-likelihood of `dataset` under every retained draw.
pub fn pointwise_loglik(
    chain: &Chain,
    dataset: &CountDataset,
    design: &DesignMatrix,
) -> Result<LogLikMatrix> {
    let j = chain.draws_per_cohort();
    if j == 0 {
        return Err(Error::Undefined("chain has no retained draws".into()));
    }
    let owner = chain_cohort_index(chain, dataset)?;
    let rows = slope_rows(design);
    let values = (0..j)
        .map(|d| {
            rows.iter()
                .zip(&owner)
                .zip(dataset.y())
                .map(|((x, &c), &y)| {
                    let th = &chain.cohorts[c].draws[d];
                    let lin: f64 = x.iter().zip(&th.beta).map(|(a, b)| a * b).sum();
                    Ok(nb_logpmf(y, &NbParams::new(th.c * lin.exp(), th.gamma)?))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    LogLikMatrix::new(values)
}

/// Posterior-mean predicted counts and posterior-mean dispersions.
pub fn posterior_predictions(
    chain: &Chain,
    dataset: &CountDataset,
    design: &DesignMatrix,
) -> Result<PointPredictions> {
    let j = chain.draws_per_cohort();
    if j == 0 {
        return Err(Error::Undefined("chain has no retained draws".into()));
    }
    let owner = chain_cohort_index(chain, dataset)?;
    let rows = slope_rows(design);
    let mut eta = Vec::with_capacity(rows.len());
    let mut gamma = Vec::with_capacity(rows.len());
    for (x, &c) in rows.iter().zip(&owner) {
        let draws = &chain.cohorts[c].draws;
        let mut e = 0.0;
        let mut g = 0.0;
        for th in draws {
            let lin: f64 = x.iter().zip(&th.beta).map(|(a, b)| a * b).sum();
            e += th.c * lin.exp();
            g += th.gamma;
        }
        eta.push(e / j as f64);
        gamma.push(g / j as f64);
    }
    Ok(PointPredictions { eta, gamma })
}

/// Metric report for a sampled model, including Durbin-Watson statistics
/// of the thinned traces.
pub fn chain_report(
    chain: &Chain,
    dataset: &CountDataset,
    design: &DesignMatrix,
) -> Result<MetricReport> {
    let ll = pointwise_loglik(chain, dataset, design)?;
    let pred = posterior_predictions(chain, dataset, design)?;
    let mut report = MetricReport::build(&ll, dataset.y(), &pred)?;
    let names = chain.parameter_names();
    for c in &chain.cohorts {
        for (i, name) in names.iter().enumerate() {
            let thinned: Vec<f64> = c
                .trace(i)
                .into_iter()
                .step_by(crate::sampler::DW_THIN)
                .collect();
            if let Ok(dw) = durbin_watson(&thinned) {
                report.dw.insert(format!("{}/{}", c.label, name), dw);
            }
        }
    }
    Ok(report)
}

/// Metric report for a GLM point estimate. The WAIC terms use `draws`
/// coefficient vectors from `MVN(beta, cov)` with the dispersion held at its
/// estimate.
pub fn glm_report(
    beta: &[f64],
    fit: &GlmFit,
    dataset: &CountDataset,
    design: &DesignMatrix,
    draws: usize,
    seed: u64,
) -> Result<MetricReport> {
    let x = design.matrix();
    let mean = DVector::from_column_slice(beta);
    let cov = fit.cov_matrix();
    let mut rng = stream(seed, &[]);
    let gamma = fit.gamma_hat;
    let values = (0..draws)
        .map(|_| {
            let b = mvn_draw(&mean, &cov, &mut rng)?;
            (x * b)
                .iter()
                .zip(dataset.y())
                .map(|(lin, &y)| Ok(nb_logpmf(y, &NbParams::new(lin.exp(), gamma)?)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let ll = LogLikMatrix::new(values)?;
    let eta: Vec<f64> = (x * &mean).iter().map(|v| v.exp()).collect();
    let pred = PointPredictions {
        gamma: vec![gamma; eta.len()],
        eta,
    };
    MetricReport::build(&ll, dataset.y(), &pred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Cross-cohort correlation of `(C_j, beta_j)` per draw; draws with no
    /// cross-cohort spread are skipped.
    pub per_draw: Vec<f64>,
    /// Posterior means `(C_j, beta_j)` per cohort.
    pub mean_pairs: Vec<(f64, f64)>,
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

impl CorrelationReport {
    pub fn fraction_negative(&self) -> f64 {
        if self.per_draw.is_empty() {
            return f64::NAN;
        }
        self.per_draw.iter().filter(|&&r| r < 0.0).count() as f64 / self.per_draw.len() as f64
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Posterior distribution of the cross-cohort correlation between the
/// intercept `C_j` and slope `slope` of `beta_j`.
pub fn intercept_slope_correlation(chain: &Chain, slope: usize) -> Result<CorrelationReport> {
    let m = chain.cohorts.len();
    if m < 2 {
        return Err(Error::Undefined(format!(
            "correlation across cohorts needs at least 2 cohorts, got {m}"
        )));
    }
    let j = chain.draws_per_cohort();
    if j == 0 {
        return Err(Error::Undefined("chain has no retained draws".into()));
    }
    if slope >= chain.slope_names.len() {
        return Err(Error::Validation(format!(
            "slope index {slope} out of range"
        )));
    }
    let mut warnings = Vec::new();
    if m == 2 {
        warnings.push("two cohorts: every per-draw correlation is -1 or +1".to_string());
    }
    let per_draw: Vec<f64> = (0..j)
        .filter_map(|d| {
            let c: Vec<f64> = chain.cohorts.iter().map(|ch| ch.draws[d].c).collect();
            let b: Vec<f64> = chain
                .cohorts
                .iter()
                .map(|ch| ch.draws[d].beta[slope])
                .collect();
            pearson(&c, &b)
        })
        .collect();
    let degenerate = per_draw.is_empty();
    if degenerate {
        warnings.push("no cross-cohort variation in any draw; correlation undefined".to_string());
    } else if per_draw.len() < j {
        warnings.push(format!(
            "{} draws without cross-cohort variation skipped",
            j - per_draw.len()
        ));
    }
    let mean_pairs = chain
        .cohorts
        .iter()
        .map(|ch| {
            let n = ch.draws.len() as f64;
            (
                ch.draws.iter().map(|d| d.c).sum::<f64>() / n,
                ch.draws.iter().map(|d| d.beta[slope]).sum::<f64>() / n,
            )
        })
        .collect();
    Ok(CorrelationReport {
        per_draw,
        mean_pairs,
        degenerate,
        warnings,
    })
}
