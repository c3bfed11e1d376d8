use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants split into two families: validation failures (bad input, bad
/// configuration, violated preconditions) and runtime failures (I/O,
/// numerical blow-ups). [`Error::is_validation`] drives the CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("schema mismatch: missing columns {missing:?}")]
    Schema { missing: Vec<String> },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid template: {0}")]
    Template(String),

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("sequence of length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("AUC undefined: {positives} positive and {negatives} negative instances")]
    UndefinedAuc { positives: usize, negatives: usize },

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("inconsistent results: {0}")]
    Inconsistent(String),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether this error is a validation failure (exit code 1) rather than
    /// a runtime failure (exit code 2).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Schema { .. }
                | Error::Config(_)
                | Error::Precondition(_)
                | Error::Template(_)
                | Error::TokenOutOfRange { .. }
                | Error::SequenceTooLong { .. }
                | Error::UndefinedAuc { .. }
                | Error::Inconsistent(_)
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
