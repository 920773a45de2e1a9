use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator or the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{quantity} = {value} is outside the valid range [{min}, {max}]")]
    OutOfRange {
        quantity: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("fit failed: {reason}")]
    FitFailed { reason: String, residual_norm: f64 },

    #[error("grid fit did not converge after {iterations} iterations")]
    GridNotConverged {
        iterations: usize,
        last: Box<crate::analysis::GridFit>,
    },

    #[error("no site found: {0}")]
    NoSite(String),

    #[error("report integrity check failed: {0}")]
    Integrity(String),

    #[error("malformed input {path}: {message}")]
    Parse { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
