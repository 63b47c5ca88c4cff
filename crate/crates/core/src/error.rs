use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GemError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GemError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes {found:?}, expected \"EMB1\"")]
    BadMagic { found: [u8; 4] },

    #[error("truncated container: expected {expected} bytes of {what}, found {found}")]
    Truncated {
        what: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("invalid {field} at sample {index}: {reason}")]
    Sample {
        field: &'static str,
        index: usize,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("insufficient data: {needed} samples required, {available} available")]
    InsufficientData { needed: usize, available: usize },

    #[error("need both ID and OOD samples (id={id}, ood={ood})")]
    OneClass { id: usize, ood: usize },

    #[error("covariance of layer {layer} is not positive definite after regularization")]
    NotPositiveDefinite { layer: usize },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl GemError {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        GemError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GemError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's data rather than the
    /// filesystem. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, GemError::Io { .. })
    }
}
