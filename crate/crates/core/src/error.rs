use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the sparse-grid FBSDE solver and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("picard iteration did not converge at time level {level}, point {point:?} (last residual {residual:.3e})")]
    Divergence {
        level: usize,
        point: Vec<f64>,
        residual: f64,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
