use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("step {step_id}: {msg}")]
    InvalidStep { step_id: u64, msg: String },
    #[error("empty trial")]
    EmptyTrial,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("stale forward cache: parameters changed since the forward pass")]
    StaleCache,
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("dataset has {have} samples, fewer than one batch of {batch_size}")]
    DatasetTooSmall { have: usize, batch_size: usize },
    #[error("map is empty")]
    EmptyMap,
    #[error("route leaves the arena at waypoint {index} ({x}, {y})")]
    RouteOutsideArena { index: usize, x: f64, y: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
