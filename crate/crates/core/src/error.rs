use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum JpshError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("data error at row {row}, col {col}: {msg}")]
    Data { row: usize, col: usize, msg: String },

    #[error("split error: class {class} has {available} samples, fewer than the {requested} requested for testing")]
    Split {
        class: u32,
        available: usize,
        requested: usize,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("objective diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("index is empty")]
    EmptyIndex,

    #[error("label error: {0}")]
    Label(String),
}

impl JpshError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        JpshError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = JpshError> = std::result::Result<T, E>;
