use std::path::PathBuf;

use thiserror::Error;

use crate::estimators::FitTrace;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A solver hit non-finite values or exhausted its stability budget.
    /// `last_iterate` is the last coefficient vector that was still finite.
    #[error("numeric failure: {context}")]
    NumericFailure {
        context: String,
        last_iterate: Vec<f64>,
    },

    /// A multi-round fit aborted mid-flight; the trace records every round
    /// completed before the failure.
    #[error("fit aborted: {context}")]
    FitAborted {
        context: String,
        trace: Box<FitTrace>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
