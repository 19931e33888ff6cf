use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EcssError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EcssError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl EcssError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EcssError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            EcssError::Config(_)
                | EcssError::Validation(_)
                | EcssError::Lookup(_)
                | EcssError::Parse { .. }
                | EcssError::Shape(_)
        )
    }
}
