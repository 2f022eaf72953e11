use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A size or count exceeds what is available or supported.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A qubit index is out of range or two indices coincide.
    #[error("index error: {0}")]
    Index(String),

    /// Shapes, lengths or structural preconditions disagree.
    #[error("contract violated: {0}")]
    Contract(String),

    /// A value lies outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A non-finite value appeared during optimization.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
