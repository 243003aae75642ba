//! `fit`: ingest, estimate, evaluate and write one run directory.

use std::fs;
use std::path::{Path, PathBuf};

use hbsimex::data::ingest_reader;
use hbsimex::sampler::ChainSummary;
use hbsimex::{
    estimate_error_variance, evaluate, fit, split_rows, CountDataset, FitOptions, FixedHypers,
    GlmFit, ReplicateSet, SplitConfig,
};
use serde::Serialize;

use crate::config::{model_name, ErrorVariance, LoadedConfig};
use crate::failure::Failure;
use crate::output::{create, emit, sha256_hex, write_json};

pub struct FitArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub preflight_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preflight {
    pub n: usize,
    pub cohorts: usize,
    pub covariates: Vec<String>,
    pub error_prone: String,
    pub outcome_mean: f64,
    pub outcome_variance: f64,
}

impl Preflight {
    pub fn of(ds: &CountDataset) -> Self {
        Self {
            n: ds.n(),
            cohorts: ds.m(),
            covariates: ds
                .covariates()
                .iter()
                .map(|c| c.name().to_string())
                .collect(),
            error_prone: ds.covariates()[ds.error_prone_index()].name().to_string(),
            outcome_mean: ds.outcome_mean(),
            outcome_variance: ds.outcome_variance(),
        }
    }
}

/// Everything needed to reproduce the run; no wall-clock or host details.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_sha256: String,
    data_sha256: String,
    replicate_file_sha256: Option<String>,
    seed: u64,
    model: &'static str,
    options: &'a FitOptions,
    split: Option<SplitConfig>,
}

#[derive(Debug, Serialize)]
struct SplitSummary {
    train_records: usize,
    test_records: usize,
    resampled_cohorts: Vec<String>,
}

#[derive(Debug, Serialize)]
struct FitSummary<'a> {
    model: &'static str,
    column_names: &'a [String],
    coefficients: &'a [f64],
    naive_glm: &'a GlmFit,
    sigma2_eps: Option<f64>,
    split: Option<SplitSummary>,
    fixed_hypers: Option<&'a FixedHypers>,
    chain: Option<ChainSummary>,
    warnings: &'a [String],
}

fn read_bytes(path: &Path, what: &str) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::data(format!("cannot read {what} {}: {e}", path.display())))
}

pub fn run(args: &FitArgs) -> Result<(), Failure> {
    let loaded = LoadedConfig::read(&args.config)?;
    let cfg = &loaded.config;
    let data_bytes = read_bytes(&loaded.data_path(), "data file")?;
    let dataset = ingest_reader(data_bytes.as_slice(), &cfg.schema())?;
    let preflight = Preflight::of(&dataset);
    emit(&serde_json::to_string(&preflight)?);
    if args.preflight_only {
        return Ok(());
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| loaded.output_dir())
        .ok_or_else(|| Failure::config("no output directory: pass --out or set [output] dir"))?;

    let mut replicate_hash = None;
    let sigma2_eps = match loaded.error_variance() {
        None => None,
        Some(ErrorVariance::Given(v)) => Some(v),
        Some(ErrorVariance::Replicates(path)) => {
            let bytes = read_bytes(&path, "replicate file")?;
            replicate_hash = Some(sha256_hex(&bytes));
            let reps = ReplicateSet::read_csv(bytes.as_slice())?;
            Some(estimate_error_variance(&reps)?)
        }
    };
    let opts = cfg.fit_options(sigma2_eps);
    opts.validate()?;

    let split_cfg = cfg.split_config();
    let (train, test, split) = match &split_cfg {
        Some(sc) => {
            let s = split_rows(&dataset, sc)?;
            let train = dataset.select(&s.train_rows)?;
            let test = if s.test_rows.is_empty() {
                None
            } else {
                Some(dataset.select_compact(&s.test_rows)?)
            };
            let summary = SplitSummary {
                train_records: s.train_rows.len(),
                test_records: s.test_rows.len(),
                resampled_cohorts: s.resampled_cohorts,
            };
            (train, test, Some(summary))
        }
        None => (dataset.clone(), None, None),
    };

    let result = fit(&train, &opts)?;
    let train_metrics = evaluate(&result, &train, &opts)?;
    let test_metrics = test
        .as_ref()
        .map(|t| evaluate(&result, t, &opts))
        .transpose()?;

    fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", out_dir.display())))?;
    let manifest = Manifest {
        tool: "hbsimex",
        version: env!("CARGO_PKG_VERSION"),
        command: "fit",
        config_sha256: sha256_hex(&loaded.raw),
        data_sha256: sha256_hex(&data_bytes),
        replicate_file_sha256: replicate_hash,
        seed: cfg.model.seed,
        model: model_name(opts.model),
        options: &opts,
        split: split_cfg,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    write_json(&out_dir.join("preflight.json"), &preflight)?;
    let summary = FitSummary {
        model: model_name(result.model),
        column_names: &result.column_names,
        coefficients: &result.coefficients,
        naive_glm: &result.glm,
        sigma2_eps,
        split,
        fixed_hypers: result.fixed.as_ref(),
        chain: result.chain.as_ref().map(|c| c.summary()),
        warnings: &result.warnings,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    if let Some(chain) = &result.chain {
        chain.write_draws_csv(create(&out_dir.join("draws.csv"))?)?;
    }
    if let Some(trace) = &result.simex {
        trace.write_csv(create(&out_dir.join("simex_trace.csv"))?)?;
        write_json(&out_dir.join("simex_trace.json"), trace)?;
    }
    if let Some(trace) = &result.hb_simex {
        trace.write_csv(create(&out_dir.join("hb_simex_trace.csv"))?)?;
        write_json(&out_dir.join("hb_simex_trace.json"), trace)?;
    }
    write_json(&out_dir.join("metrics_train.json"), &train_metrics)?;
    train_metrics.write_penalty_csv(create(&out_dir.join("penalty_train.csv"))?)?;
    if let Some(m) = &test_metrics {
        write_json(&out_dir.join("metrics_test.json"), m)?;
        m.write_penalty_csv(create(&out_dir.join("penalty_test.csv"))?)?;
    }

    let done = serde_json::json!({
        "output_dir": out_dir.display().to_string(),
        "model": model_name(result.model),
        "coefficients": result.coefficients,
        "waic_train": train_metrics.waic,
        "waic_test": test_metrics.as_ref().map(|m| m.waic),
        "warnings": result.warnings.len(),
    });
    emit(&done.to_string());
    Ok(())
}
