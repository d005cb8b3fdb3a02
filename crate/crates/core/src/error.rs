use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a documented invariant (bad probability vector, wrong shape, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A query referenced a word that does not exist in a partition.
    #[error("unknown word index {0}")]
    UnknownWord(usize),

    /// Malformed or inconsistent data file.
    #[error("{path}:{line}: {msg}")]
    Ingest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// A nested model comparison received a reduced model that fits better than the full one.
    #[error("models are not nested: reduced log-likelihood {reduced} exceeds full {full}")]
    NotNested { full: f64, reduced: f64 },

    /// The Theorem-2 style construction could not place the support segment.
    #[error("construction failed: {0}")]
    Construction(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn ingest(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
