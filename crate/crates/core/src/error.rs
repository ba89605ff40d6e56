use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum CdnetError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class coverage: {0}")]
    ClassCoverage(String),

    #[error("interval collapse caused by the {knob} knob: {detail}")]
    IntervalCollapse { knob: &'static str, detail: String },

    #[error("parse error at {location}: {detail}")]
    Parse { location: String, detail: String },

    #[error("only binary problems are supported, found {0} distinct labels")]
    NotBinary(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CdnetError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CdnetError {
    CdnetError::InvalidArgument(msg.into())
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CdnetError {
    let path = path.into();
    move |source| CdnetError::Io { path, source }
}
