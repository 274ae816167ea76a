use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("objective diverged at iteration {iteration} (value {value})")]
    Divergence { iteration: usize, value: f64 },

    /// Too many voxel/detector flight times fall outside the recorded window.
    #[error("time window too short: {outside} of {total} voxel-detector pairs fall beyond {window_s:e} s")]
    WindowTooShort {
        outside: u64,
        total: u64,
        window_s: f64,
    },

    /// Too many DISCO output points have no input inside the kernel support.
    #[error("kernel radius {radius} too small: {empty} of {total} output points have an empty neighborhood")]
    EmptyNeighborhoods {
        radius: f64,
        empty: usize,
        total: usize,
    },

    #[error("header mismatch between {first} and {second}: {detail}")]
    Mismatch {
        first: String,
        second: String,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {source}")]
    Header {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
