use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("simulation diverged in ensemble {ensemble} at step {step}")]
    Divergence { ensemble: usize, step: usize },

    #[error("query outside data support (kernel weights underflow)")]
    OutsideSupport,

    #[error("velocities are required but missing from the dataset")]
    MissingVelocities,

    #[error("sinkhorn did not converge after {iters} iterations (marginal violation {violation:e})")]
    SinkhornNotConverged { iters: usize, violation: f64 },

    #[error("{field} is not supported in dimension {dim}")]
    Unsupported { field: &'static str, dim: usize },

    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGradient { index: usize },

    #[error("loss became non-finite at epoch {epoch}")]
    LossDiverged {
        epoch: usize,
        /// Parameters at the start of the failing epoch.
        last_finite: Box<crate::potentials::NeuralPotential>,
    },

    #[error("snapshot index {index} out of range (have {count})")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("normalizer of the equilibrium weight is degenerate")]
    DegenerateNormalizer,

    #[error("malformed dataset at {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
