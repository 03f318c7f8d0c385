use std::path::PathBuf;

use fusedepth_tensor::TensorError;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid config `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{path}: {msg} (byte offset {offset})")]
    Format { path: PathBuf, offset: u64, msg: String },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("scene generation failed after {attempts} attempts (seed {seed})")]
    DegenerateScene { seed: u64, attempts: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("{0}")]
    Serialize(String),
}

impl CoreError {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        CoreError::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category used for CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            CoreError::Tensor(_) => "numeric",
            CoreError::Config { .. } => "config",
            CoreError::InvalidArgument { .. } => "argument",
            CoreError::Format { .. } | CoreError::Parse { .. } => "format",
            CoreError::Io { .. } => "io",
            CoreError::Dataset { .. } => "dataset",
            CoreError::Checkpoint(_) => "checkpoint",
            CoreError::DegenerateScene { .. } => "synth",
            CoreError::NonFiniteLoss { .. } => "training",
            CoreError::Serialize(_) => "serialize",
        }
    }
}
