use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, the layers and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("register size {qubits} outside supported range 1..={max}")]
    Size { qubits: usize, max: usize },

    #[error("qubit index {index} invalid for a {qubits}-qubit register")]
    Index { index: usize, qubits: usize },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
