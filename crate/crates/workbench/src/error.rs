use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error(transparent)]
    Core(#[from] surfel_core::Error),
    #[error("missing file {path}: {reason}")]
    MissingFile { path: PathBuf, reason: String },
    #[error("malformed JSON in {path}: {reason}")]
    Json { path: PathBuf, reason: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("format: {0}")]
    Format(String),
    #[error("enhancer: {0}")]
    Enhancer(String),
    #[error("output directory is locked by another writer: {0}")]
    Locked(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type WbResult<T> = std::result::Result<T, WorkbenchError>;

impl WorkbenchError {
    pub fn missing(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::MissingFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    }

    /// Process exit code; 2 is reserved for configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::MissingFile { .. } => 3,
            Self::Json { .. } => 4,
            Self::Dimension(_) => 5,
            Self::Validation(_) => 6,
            Self::Format(_) => 7,
            Self::Enhancer(_) => 8,
            Self::Locked(_) => 9,
            Self::Io(_) => 10,
            Self::Core(e) => match e {
                surfel_core::Error::NonFinite { .. } => 11,
                surfel_core::Error::Enhancer(_) => 8,
                surfel_core::Error::Format(_) => 7,
                surfel_core::Error::Json(_) => 4,
                surfel_core::Error::Io(_) => 10,
                surfel_core::Error::Contract(_) | surfel_core::Error::Invalid { .. } => 6,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(surfel_core::Error::NonFinite { .. }) => "non_finite",
            Self::Core(surfel_core::Error::Enhancer(_)) | Self::Enhancer(_) => "enhancer",
            Self::Core(surfel_core::Error::Format(_)) | Self::Format(_) => "format",
            Self::Core(surfel_core::Error::Json(_)) | Self::Json { .. } => "json",
            Self::Core(surfel_core::Error::Io(_)) | Self::Io(_) => "io",
            Self::Core(_) | Self::Validation(_) => "validation",
            Self::MissingFile { .. } => "missing_file",
            Self::Config(_) => "config",
            Self::Dimension(_) => "dimension",
            Self::Locked(_) => "locked",
        }
    }

    /// Machine-readable envelope for stderr.
    pub fn envelope(&self) -> String {
        #[derive(Serialize)]
        struct Envelope<'a> {
            error: &'a str,
            code: i32,
            message: String,
        }
        serde_json::to_string(&Envelope {
            error: self.kind(),
            code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("serializable")
    }
}
