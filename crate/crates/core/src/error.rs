use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, IrtError>;

#[derive(Debug, Error)]
pub enum IrtError {
    /// Invalid design, settings or config file contents.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (non-binary entries, ragged CSV rows, ...).
    #[error("input error: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Correlation undefined because an item has a single observed response.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl IrtError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IrtError::Io {
            path: path.into(),
            source,
        }
    }
}
