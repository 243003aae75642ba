//! Negative-binomial count regression with covariate measurement error:
//! a frequentist GLM, SIMEX correction, and a hierarchical Bayesian
//! varying-intercept/varying-slope sampler.

pub mod count_glm;
pub mod data;
pub mod error;
pub mod eval;
pub mod measurement;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod simex;
pub mod synth;

pub use count_glm::{fit_nb_glm, fit_nb_glm_with, nb_logpmf, GlmFit, GlmOptions, NbParams};
pub use data::{build_design, ingest_csv, CountDataset, Covariate, DesignMatrix, Schema};
pub use error::{Error, ErrorKind, Result};
pub use eval::{durbin_watson, lppd, msle, scaled_deviance, waic, LogLikMatrix, MetricReport};
pub use measurement::{estimate_error_variance, ReplicateSet, ResidualPool};
pub use pipeline::{evaluate, fit, split_rows, FitOptions, FitResult, ModelKind, SplitConfig};
pub use sampler::{
    run_chain, Chain, ChainInit, FixedHypers, HierParams, HyperParams, SamplerConfig,
};
pub use scalar::Real;
pub use simex::{extrapolate, run_simex, Extrapolant, SimexConfig, SimexTrace};
pub use synth::{generate, GroundTruth, TruthSpec};

pub type NbParamsF64 = NbParams<f64>;
pub type NbParamsF32 = NbParams<f32>;
pub type ReplicateSetF64 = ReplicateSet<f64>;
pub type ReplicateSetF32 = ReplicateSet<f32>;
