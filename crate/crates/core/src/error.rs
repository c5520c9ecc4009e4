use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DpsuError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DpsuError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The requested configuration is valid but deliberately not run.
    #[error("refused: {0}")]
    Refused(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("invalid database: {0}")]
    InvalidDatabase(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DpsuError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DpsuError::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DpsuError::Io {
            path: path.into(),
            source,
        }
    }
}
