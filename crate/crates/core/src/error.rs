use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid label: {0:?} is empty after normalization")]
    EmptyLabel(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("prompt for {task} is missing field `{field}`")]
    MissingField { task: &'static str, field: &'static str },

    #[error("response contained no well-formed chain lines ({skipped} skipped)")]
    NoChains { skipped: usize },

    #[error("backend request failed permanently (status {status}): {message}")]
    BackendRejected { status: u16, message: String },

    #[error("backend unavailable after {attempts} attempts: {message}")]
    BackendExhausted { attempts: u32, message: String },

    #[error("backend configuration: {0}")]
    BackendConfig(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
