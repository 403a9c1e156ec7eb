use thiserror::Error;

pub type Result<T> = std::result::Result<T, DotaError>;

#[derive(Debug, Error)]
pub enum DotaError {
    /// A configuration field is out of range. The message names the field.
    #[error("{message}")]
    Config { field: &'static str, message: String },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("checkpoint corrupted: {0}")]
    Corruption(String),

    #[error("incompatible inputs: {0}")]
    Compatibility(String),

    #[error("feedback error: {0}")]
    Feedback(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DotaError {
    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        DotaError::Config { field, message: message.into() }
    }
}
