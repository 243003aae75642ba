//! Batch frontend: `fit`, `estimate-error`, `simulate`, `diagnose`.

mod aux_cmds;
mod config;
mod diagnose;
mod failure;
mod fit;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind as ClapKind;
use clap::{Parser, Subcommand, ValueEnum};
use hbsimex::ResidualPool;

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "hbsimex",
    version,
    about = "Negative-binomial count models with SIMEX measurement-error correction"
)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Pool {
    Cohort,
    Global,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model variant and write a run directory.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print dataset summary statistics and stop.
        #[arg(long)]
        preflight: bool,
    },
    /// Estimate the covariate error variance from replicate measurements.
    EstimateError {
        /// Long-format `record_id,replicate_index,value` file.
        #[arg(long, conflicts_with_all = ["config", "bootstrap_q"])]
        replicates: Option<PathBuf>,
        /// Run config whose data supplies the error-prone column.
        #[arg(long, requires = "bootstrap_q")]
        config: Option<PathBuf>,
        /// Bootstrap replicates per record.
        #[arg(long, requires = "config")]
        bootstrap_q: Option<usize>,
        #[arg(long, value_enum, default_value = "cohort")]
        pool: Pool,
        /// Defaults to the config's model seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with known parameters.
    Simulate {
        #[arg(long)]
        cohorts: usize,
        #[arg(long)]
        per_cohort: usize,
        #[arg(long)]
        seed: u64,
        /// TOML generating distribution; omitted keys take defaults.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Durbin-Watson statistic and move rate for every trace in a draws file.
    Diagnose {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long, default_value_t = 10)]
        thin: usize,
    },
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Fit {
            config,
            out,
            preflight,
        } => fit::run(&fit::FitArgs {
            config,
            out,
            preflight_only: preflight,
        }),
        Command::EstimateError {
            replicates,
            config,
            bootstrap_q,
            pool,
            seed,
            out,
        } => {
            let report = match (replicates, config, bootstrap_q) {
                (Some(r), _, _) => aux_cmds::estimate_from_file(&r)?,
                (None, Some(c), Some(q)) => {
                    let pool = match pool {
                        Pool::Cohort => ResidualPool::Cohort,
                        Pool::Global => ResidualPool::Global,
                    };
                    aux_cmds::estimate_bootstrap(&c, q, pool, seed)?
                }
                _ => {
                    return Err(Failure::config(
                        "pass --replicates FILE, or --config FILE with --bootstrap-q Q",
                    ))
                }
            };
            if let Some(path) = out {
                output::write_json(&path, &report)?;
            }
            output::emit(&serde_json::to_string(&report)?);
            Ok(())
        }
        Command::Simulate {
            cohorts,
            per_cohort,
            seed,
            truth,
            out,
        } => aux_cmds::simulate(&aux_cmds::SimulateArgs {
            cohorts,
            per_cohort,
            seed,
            truth,
            out,
        }),
        Command::Diagnose { draws, thin } => {
            let file = std::fs::File::open(&draws).map_err(|e| {
                Failure::data(format!("cannot read draws file {}: {e}", draws.display()))
            })?;
            let d = diagnose::diagnose(std::io::BufReader::new(file), thin)?;
            output::emit(&serde_json::to_string(&d)?);
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(
                e.kind(),
                ClapKind::DisplayHelp
                    | ClapKind::DisplayVersion
                    | ClapKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                e.exit();
            }
            eprintln!("{}", Failure::config(e.to_string().trim_end()).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
