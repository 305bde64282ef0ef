use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training and generation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Bad input data, located at a 1-based data row and column where known.
    #[error("{message} at row {row}{}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Data {
        row: usize,
        column: Option<usize>,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Evaluation at a point where a coefficient is singular (e.g. beta at t = 1).
    #[error("singular evaluation: {0}")]
    Singular(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn data(row: usize, column: Option<usize>, message: impl Into<String>) -> Self {
        Error::Data {
            row,
            column,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}

pub(crate) fn ensure_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
