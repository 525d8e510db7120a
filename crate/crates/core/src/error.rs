use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DstError {
    #[error("{path}: JSON parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown service `{0}`")]
    UnknownService(String),

    #[error("labeling error: {0}")]
    Labeling(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing pretrained weights at {path}: {hint}")]
    MissingPretrained { path: PathBuf, hint: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DstError>;

impl DstError {
    pub(crate) fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        DstError::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
