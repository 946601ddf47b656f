//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by graph construction, training, and the harness.
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid interval for a uniform draw.
    #[error("invalid range: lo={lo} must be < hi={hi}")]
    InvalidRange { lo: f64, hi: f64 },

    /// A non-finite value appeared in a numeric computation.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Requested edge budget exceeds the candidate-pair count.
    #[error("edge budget {requested} exceeds {available} candidate pairs")]
    Budget { requested: usize, available: usize },

    /// A caller violated an API contract (shape mismatch, missing state, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid experiment configuration; `path` is the offending key path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// CSV parse failure with a 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
