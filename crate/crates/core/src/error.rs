use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
///
/// Variants are split so that callers (the CLI in particular) can tell
/// validation problems apart from runtime and I/O failures.
#[derive(Debug, Error)]
pub enum FmdaError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "singular weighted normal matrix (condition estimate {condition:.3e}, dimension {dim})"
    )]
    Singular { condition: f64, dim: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training failed for class {class}: {source}")]
    Training {
        class: usize,
        #[source]
        source: Box<FmdaError>,
    },

    #[error("unknown {kind} '{name}' (available: {available})")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl FmdaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FmdaError::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        FmdaError::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FmdaError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            FmdaError::Invalid(_)
            | FmdaError::Parse { .. }
            | FmdaError::Shape(_)
            | FmdaError::Domain(_)
            | FmdaError::Unknown { .. }
            | FmdaError::Json(_) => true,
            FmdaError::Training { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, FmdaError>;
