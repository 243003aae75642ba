use thiserror::Error;

use crate::count_glm::GlmFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate column: {0}")]
    DegenerateColumn(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "sample variance {variance} does not exceed the mean {mean}; dispersion is unidentified"
    )]
    Underdispersion { mean: f64, variance: f64 },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error(
        "IRLS did not converge within {iterations} iterations (gradient norm {gradient_norm:e})"
    )]
    Convergence {
        iterations: usize,
        gradient_norm: f64,
        last: Box<GlmFit>,
    },

    #[error("insufficient replicates: {0}")]
    InsufficientReplicates(String),

    #[error("singular extrapolation fit: {0}")]
    SingularFit(String),

    #[error("estimator failed at lambda={lambda}, replicate {replicate}: {source}")]
    Estimator {
        lambda: f64,
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::Schema(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::DegenerateColumn(_)
            | Error::InsufficientReplicates(_)
            | Error::Underdispersion { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::Estimator { source, .. } => source.kind(),
            Error::Domain(_)
            | Error::SingularDesign(_)
            | Error::Convergence { .. }
            | Error::SingularFit(_)
            | Error::Numerical(_)
            | Error::Undefined(_) => ErrorKind::Numerical,
        }
    }
}
