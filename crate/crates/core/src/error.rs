//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A forward evaluation produced a non-finite value while perturbing
    /// the logit at `(pixel, class)`.
    #[error("non-finite loss value at pixel {pixel}, class {class}: {value}")]
    NumericalFailure {
        pixel: usize,
        class: usize,
        value: f64,
    },

    #[error("dataset generation failed: {0}")]
    GenerationFailure(String),

    #[error("training subset misses class {missing_class} after {attempts} reshuffles")]
    SubsampleFailure {
        missing_class: usize,
        attempts: usize,
    },

    #[error("training diverged at epoch {epoch}: loss = {value}")]
    TrainingDiverged { epoch: usize, value: f64 },

    #[error("malformed dataset file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
