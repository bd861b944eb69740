use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A line of a newline-delimited JSON file could not be decoded.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Data decoded fine but breaks a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("document {doc_id}, word {index}: {message}")]
    InvalidWord {
        doc_id: String,
        index: usize,
        message: String,
    },

    #[error("document {0} carries no standard reading order")]
    NoStandardOrder(String),

    #[error("order mismatch: {0}")]
    OrderMismatch(String),

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{0} requires at least one input")]
    Empty(&'static str),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
