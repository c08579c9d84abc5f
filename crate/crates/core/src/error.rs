use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ScanError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("non-finite gradient in parameter `{param}` at optimizer step {step}")]
    NonFiniteGradient { param: String, step: u64 },

    #[error("non-finite {what} at step {step} (epoch {epoch})")]
    NonFiniteLoss { what: String, step: u64, epoch: usize },

    #[error("architecture fingerprint mismatch: checkpoint has {found}, network expects {expected}")]
    Fingerprint { expected: String, found: String },

    #[error("path error: {0}")]
    Path(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ScanError {
    pub fn shape(msg: impl Into<String>) -> Self {
        ScanError::Shape(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ScanError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        ScanError::Format { path: path.into(), reason: reason.into() }
    }
}
