//! TOML run configuration. Relative paths resolve against the directory
//! holding the config file.

use std::path::{Path, PathBuf};

use hbsimex::pipeline::HyperOverrides;
use hbsimex::sampler::GammaRateSource;
use hbsimex::{
    Extrapolant, FitOptions, ModelKind, SamplerConfig, Schema, SimexConfig, SplitConfig,
};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub simex: Option<SimexSection>,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub hypers: HyperOverrides,
    pub split: Option<SplitSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    pub outcome: String,
    pub cohort: String,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub categoricals: Vec<String>,
    pub error_prone: String,
    #[serde(default = "comma")]
    pub delimiter: char,
}

fn comma() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub seed: u64,
    pub glm_draws: Option<usize>,
}

/// Exactly one of `sigma2_eps` and `replicate_file` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimexSection {
    pub lambda_grid: Option<Vec<f64>>,
    pub replicates: Option<usize>,
    pub extrapolant: Option<Extrapolant>,
    pub sigma2_eps: Option<f64>,
    pub replicate_file: Option<PathBuf>,
    /// Defaults to the model seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub greedy_accept: Option<bool>,
    pub gamma_rate_source: Option<GammaRateSource>,
    pub target_acceptance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_per_cohort: usize,
    pub test_per_cohort: usize,
    /// Defaults to the model seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Where the SIMEX error variance comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorVariance {
    Given(f64),
    Replicates(PathBuf),
}

/// A parsed config with its raw bytes and base directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Vec<u8>,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let raw = std::fs::read(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&raw)
            .map_err(|_| Failure::config(format!("config {} is not UTF-8", path.display())))?;
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, raw, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn data_path(&self) -> PathBuf {
        self.resolve(&self.config.data.path)
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.config.output.dir.as_deref().map(|d| self.resolve(d))
    }

    pub fn error_variance(&self) -> Option<ErrorVariance> {
        let s = self.config.simex.as_ref()?;
        match (s.sigma2_eps, &s.replicate_file) {
            (Some(v), None) => Some(ErrorVariance::Given(v)),
            (None, Some(f)) => Some(ErrorVariance::Replicates(self.resolve(f))),
            _ => None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        if self.model.kind.uses_simex() && self.simex.is_none() {
            return Err(Failure::config(format!(
                "model `{}` needs a [simex] section",
                model_name(self.model.kind)
            )));
        }
        if let Some(s) = &self.simex {
            match (s.sigma2_eps, &s.replicate_file) {
                (Some(_), Some(_)) => {
                    return Err(Failure::config(
                        "[simex] sets both sigma2_eps and replicate_file",
                    ))
                }
                (None, None) => {
                    return Err(Failure::config(
                        "[simex] needs sigma2_eps or replicate_file",
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        let d = &self.data;
        Schema {
            outcome: d.outcome.clone(),
            cohort: d.cohort.clone(),
            covariates: d.covariates.clone(),
            categoricals: d.categoricals.clone(),
            error_prone: d.error_prone.clone(),
            delimiter: d.delimiter,
        }
    }

    /// Estimation options with the error variance already resolved.
    pub fn fit_options(&self, sigma2_eps: Option<f64>) -> FitOptions {
        let mut opts = FitOptions::new(self.model.kind, self.model.seed);
        if let Some(g) = self.model.glm_draws {
            opts.glm_draws = g;
        }
        if let (Some(s), Some(var)) = (&self.simex, sigma2_eps) {
            let mut cfg = SimexConfig::new(var, s.seed.unwrap_or(self.model.seed));
            if let Some(g) = &s.lambda_grid {
                cfg.lambda_grid = g.clone();
            }
            if let Some(b) = s.replicates {
                cfg.replicates = b;
            }
            if let Some(e) = s.extrapolant {
                cfg.extrapolant = e;
            }
            opts.simex = Some(cfg);
        }
        let d = SamplerConfig::default();
        let s = &self.sampler;
        opts.sampler = SamplerConfig {
            iterations: s.iterations.unwrap_or(d.iterations),
            burn_in: s.burn_in.or(d.burn_in),
            greedy_accept: s.greedy_accept.unwrap_or(d.greedy_accept),
            gamma_rate_source: s.gamma_rate_source.unwrap_or(d.gamma_rate_source),
            target_acceptance: s.target_acceptance.unwrap_or(d.target_acceptance),
        };
        opts.hypers = self.hypers.clone();
        opts
    }

    pub fn split_config(&self) -> Option<SplitConfig> {
        self.split.as_ref().map(|s| SplitConfig {
            train_per_cohort: s.train_per_cohort,
            test_per_cohort: s.test_per_cohort,
            seed: s.seed.unwrap_or(self.model.seed),
        })
    }
}

pub fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Glm => "glm",
        ModelKind::GlmSimex => "glm-simex",
        ModelKind::Hb => "hb",
        ModelKind::HbSimex => "hb-simex",
    }
}
