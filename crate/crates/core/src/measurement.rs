//! Measurement-error variance estimation, bootstrap replicates and covariate
//! contamination.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// Replicated measurements of the error-prone covariate, one list per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSet<T = f64> {
    pub record_ids: Vec<usize>,
    pub replicates: Vec<Vec<T>>,
}

impl<T: Real> ReplicateSet<T> {
    pub fn new(record_ids: Vec<usize>, replicates: Vec<Vec<T>>) -> Result<Self> {
        if record_ids.len() != replicates.len() {
            return Err(Error::Validation(
                "record ids and replicate lists differ in length".into(),
            ));
        }
        if let Some(i) = replicates.iter().position(|r| r.is_empty()) {
            return Err(Error::Validation(format!(
                "record {} has no measurements",
                record_ids[i]
            )));
        }
        if replicates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite replicate value".into()));
        }
        Ok(Self {
            record_ids,
            replicates,
        })
    }

    /// `sum_i (Q_i - 1)`.
    pub fn degrees_of_freedom(&self) -> usize {
        self.replicates.iter().map(|r| r.len() - 1).sum()
    }

    pub fn total_measurements(&self) -> usize {
        self.replicates.iter().map(Vec::len).sum()
    }
}

impl ReplicateSet<f64> {
    /// Long-format CSV: `record_id,replicate_index,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["record_id", "replicate_index", "value"])?;
        for (id, reps) in self.record_ids.iter().zip(&self.replicates) {
            for (q, v) in reps.iter().enumerate() {
                w.write_record([id.to_string(), q.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut by_record: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize, name: &str| -> Result<&str> {
                rec.get(i).ok_or_else(|| Error::Parse {
                    row,
                    column: name.into(),
                    message: "missing cell".into(),
                })
            };
            let bad = |name: &str, s: &str| Error::Parse {
                row,
                column: name.into(),
                message: format!("cannot parse `{s}`"),
            };
            let id_s = field(0, "record_id")?;
            let q_s = field(1, "replicate_index")?;
            let v_s = field(2, "value")?;
            let id = id_s.parse().map_err(|_| bad("record_id", id_s))?;
            let q = q_s.parse().map_err(|_| bad("replicate_index", q_s))?;
            let v: f64 = v_s.parse().map_err(|_| bad("value", v_s))?;
            by_record.entry(id).or_default().push((q, v));
        }
        let (ids, reps) = by_record
            .into_iter()
            .map(|(id, mut vals)| {
                vals.sort_by_key(|&(q, _)| q);
                (id, vals.into_iter().map(|(_, v)| v).collect())
            })
            .unzip();
        Self::new(ids, reps)
    }
}

/// Pooled within-record variance
/// `sum_i sum_q (x_iq - mean_i)^2 / sum_i (Q_i - 1)`.
pub fn estimate_error_variance<T: Real>(reps: &ReplicateSet<T>) -> Result<T> {
    let df = reps.degrees_of_freedom();
    if df == 0 {
        return Err(Error::InsufficientReplicates(
            "every record has a single measurement".into(),
        ));
    }
    let ss = reps.replicates.iter().fold(T::zero(), |acc, r| {
        let mean = r.iter().fold(T::zero(), |a, &v| a + v) / T::from_count(r.len());
        r.iter().fold(acc, |a, &v| a + (v - mean) * (v - mean))
    });
    Ok(ss / T::from_count(df))
}

/// Where bootstrap residuals are pooled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualPool {
    /// Deviations from each record's cohort mean, resampled within cohort.
    #[default]
    Cohort,
    /// Deviations from the overall mean.
    Global,
}

/// Generate `q` replicates per record by adding residuals resampled with
/// replacement from the record's residual pool.
pub fn bootstrap_replicates(
    x: &[f64],
    cohorts: &[usize],
    pool: ResidualPool,
    q: usize,
    seed: u64,
) -> Result<ReplicateSet<f64>> {
    if q < 2 {
        return Err(Error::Parameter(format!(
            "bootstrap needs at least 2 replicates per record, got {q}"
        )));
    }
    if x.is_empty() {
        return Err(Error::Parameter("covariate vector is empty".into()));
    }
    if cohorts.len() != x.len() {
        return Err(Error::Validation(
            "cohort ids and covariate differ in length".into(),
        ));
    }
    let groups: Vec<usize> = match pool {
        ResidualPool::Cohort => cohorts.to_vec(),
        ResidualPool::Global => vec![0; x.len()],
    };
    let m = groups.iter().max().map_or(0, |&g| g + 1);
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (&g, &v) in groups.iter().zip(x) {
        sums[g] += v;
        counts[g] += 1;
    }
    let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); m];
    for (&g, &v) in groups.iter().zip(x) {
        residuals[g].push(v - sums[g] / counts[g] as f64);
    }
    let mut rng = rng::stream(seed, &[]);
    let replicates = x
        .iter()
        .zip(&groups)
        .map(|(&v, &g)| {
            let pool = &residuals[g];
            (0..q)
                .map(|_| v + pool[rng.random_range(0..pool.len())])
                .collect()
        })
        .collect();
    ReplicateSet::new((0..x.len()).collect(), replicates)
}

/// Moment summary of the classical additive error model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub sigma2_eps: f64,
    /// `Var(x) - sigma2_eps`, clamped at zero.
    pub sigma2_u: f64,
    pub mean_u: f64,
}

impl ErrorModel {
    pub fn from_moments(x: &[f64], sigma2_eps: f64) -> Result<Self> {
        if !(sigma2_eps >= 0.0) {
            return Err(Error::Domain(format!(
                "error variance must be non-negative, got {sigma2_eps}"
            )));
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = if x.len() > 1 {
            x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(Self {
            sigma2_eps,
            sigma2_u: (var - sigma2_eps).max(0.0),
            mean_u: mean,
        })
    }
}

/// `w = x + sqrt(lambda) * eps`, `eps ~ N(0, sigma2_eps)` elementwise.
pub fn contaminate(x: &[f64], lambda: f64, sigma2_eps: f64, seed: u64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "contamination level must be non-negative, got {lambda}"
        )));
    }
    if !(sigma2_eps >= 0.0) || !sigma2_eps.is_finite() {
        return Err(Error::Domain(format!(
            "error variance must be non-negative, got {sigma2_eps}"
        )));
    }
    if lambda == 0.0 || sigma2_eps == 0.0 {
        return Ok(x.to_vec());
    }
    let sd = (lambda * sigma2_eps).sqrt();
    let mut rng = rng::stream(seed, &[]);
    Ok(x.iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sd * z
        })
        .collect())
}
