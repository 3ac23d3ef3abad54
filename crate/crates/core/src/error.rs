use std::path::PathBuf;

use thiserror::Error;

use crate::fields::Dims;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small for stencil: {0:?} (need at least 3 cells per axis)")]
    GridTooSmall(Dims),

    #[error("dimension mismatch: {what} ({left:?} vs {right:?})")]
    DimMismatch {
        what: &'static str,
        left: Dims,
        right: Dims,
    },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("stale tape: {0}")]
    StaleTape(&'static str),

    #[error("negative density {value} at cell {index}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("index out of range: {what} = {index}, limit {limit}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("bad {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(reason: impl Into<String>) -> Self {
        Error::InvalidArgument(reason.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
