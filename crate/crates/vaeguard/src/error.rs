//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad configuration: unknown keys, illegal values, missing inputs.
    /// CLI maps this to exit code 2.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or latent shape disagreement, names the offending dimension.
    #[error("shape error: {0}")]
    Shape(String),

    /// Dataset problems that are not recoverable per-file.
    #[error("data error: {0}")]
    Data(String),

    /// Loss or gradient left the finite domain.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Metric preconditions violated (degenerate covariance, zero-norm vector, ...).
    #[error("metric error: {0}")]
    Metric(String),

    #[error("checkpoint error at {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure is the operator's fault rather than a runtime fault.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
