use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PfnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PfnError {
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid cut-off schedule: {0}")]
    Schedule(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("empty validity mask")]
    EmptyMask,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint config mismatch: file has {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PfnError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PfnError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        PfnError::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
