//! `estimate-error` and `simulate`.

use std::fs;
use std::path::{Path, PathBuf};

use hbsimex::data::ingest_reader;
use hbsimex::measurement::bootstrap_replicates;
use hbsimex::{estimate_error_variance, generate, ReplicateSet, ResidualPool, TruthSpec};
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::failure::Failure;
use crate::output::{emit, write_json};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorVarianceReport {
    pub source: &'static str,
    pub sigma2_eps: f64,
    pub records: usize,
    pub measurements: usize,
    pub degrees_of_freedom: usize,
    pub bootstrap_q: Option<usize>,
    pub pool: Option<ResidualPool>,
    pub seed: Option<u64>,
}

fn report(source: &'static str, reps: &ReplicateSet<f64>) -> Result<ErrorVarianceReport, Failure> {
    Ok(ErrorVarianceReport {
        source,
        sigma2_eps: estimate_error_variance(reps)?,
        records: reps.record_ids.len(),
        measurements: reps.total_measurements(),
        degrees_of_freedom: reps.degrees_of_freedom(),
        bootstrap_q: None,
        pool: None,
        seed: None,
    })
}

pub fn estimate_from_file(path: &Path) -> Result<ErrorVarianceReport, Failure> {
    let bytes = fs::read(path).map_err(|e| {
        Failure::data(format!(
            "cannot read replicate file {}: {e}",
            path.display()
        ))
    })?;
    report("replicates", &ReplicateSet::read_csv(bytes.as_slice())?)
}

/// Bootstrap replicates of the error-prone column of the configured data.
pub fn estimate_bootstrap(
    config: &Path,
    q: usize,
    pool: ResidualPool,
    seed: Option<u64>,
) -> Result<ErrorVarianceReport, Failure> {
    let loaded = LoadedConfig::read(config)?;
    let path = loaded.data_path();
    let bytes = fs::read(&path)
        .map_err(|e| Failure::data(format!("cannot read data file {}: {e}", path.display())))?;
    let ds = ingest_reader(bytes.as_slice(), &loaded.config.schema())?;
    let seed = seed.unwrap_or(loaded.config.model.seed);
    let reps = bootstrap_replicates(ds.error_prone_values(), ds.cohort(), pool, q, seed)?;
    let mut r = report("bootstrap", &reps)?;
    r.bootstrap_q = Some(q);
    r.pool = Some(pool);
    r.seed = Some(seed);
    Ok(r)
}

pub struct SimulateArgs {
    pub cohorts: usize,
    pub per_cohort: usize,
    pub seed: u64,
    pub truth: Option<PathBuf>,
    pub out: PathBuf,
}

/// Writes `data.csv`, `truth.json` and a starter `run.toml`.
pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let spec = match &args.truth {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                Failure::config(format!("cannot read truth spec {}: {e}", p.display()))
            })?;
            toml::from_str::<TruthSpec>(&text)
                .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
        }
        None => TruthSpec::default(),
    };
    let (ds, truth) = generate(args.cohorts, args.per_cohort, &spec, args.seed)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", args.out.display())))?;
    ds.write_csv_path(&args.out.join("data.csv"), &ds.schema("y", "cohort"))?;
    write_json(&args.out.join("truth.json"), &truth)?;
    let run = format!(
        "[data]\npath = \"data.csv\"\noutcome = \"y\"\ncohort = \"cohort\"\ncovariates = [\"x\"]\n\
         error_prone = \"x\"\n\n[model]\nkind = \"glm-simex\"\nseed = {seed}\n\n\
         [simex]\nsigma2_eps = {s2:?}\n\n[output]\ndir = \"run\"\n",
        seed = args.seed,
        s2 = spec.sigma2_eps,
    );
    fs::write(args.out.join("run.toml"), run)?;
    emit(
        &serde_json::json!({
            "output_dir": args.out.display().to_string(),
            "n": ds.n(),
            "cohorts": ds.m(),
        })
        .to_string(),
    );
    Ok(())
}
