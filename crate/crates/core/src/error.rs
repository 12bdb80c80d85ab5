use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("context of {len} positions exceeds window {window}")]
    ContextOverflow { len: usize, window: usize },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("unsupported format version {found} (supported: {supported})")]
    FormatVersion { found: u32, supported: u32 },

    #[error("tensor {name}: {reason}")]
    Tensor { name: String, reason: String },

    #[error("missing dosage for variant {0}")]
    MissingDosage(String),

    #[error("variant {0} is not covered by the LD panel")]
    MissingLd(String),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::Undefined(_))
    }
}
