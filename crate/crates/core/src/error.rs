use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u64),

    #[error("degenerate face geometry: {0}")]
    DegenerateFace(String),

    #[error("detection failed: {0}")]
    Detection(String),

    #[error("backend lacks required capability: {0}")]
    Capability(String),

    #[error("optimization diverged at step {step}: {message}")]
    Optimization {
        step: usize,
        message: String,
        /// Total loss after every accepted step, starting with the initial loss.
        trace: Vec<f64>,
    },

    #[error("failed to load checkpoint {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("session directory {0} is locked by another writer")]
    Locked(PathBuf),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation {
        field: field.into(),
        message: message.into(),
    }
}

impl Error {
    /// Name of the offending field for validation errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::Validation { field, .. } => Some(field),
            Error::Stage { source, .. } => source.field(),
            _ => None,
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }
}
