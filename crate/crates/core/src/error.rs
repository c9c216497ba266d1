use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("state error: {0}")]
    State(String),

    #[error("missing dataset file {}", .0.display())]
    Ingest(PathBuf),

    #[error("{file}:{line}: inconsistent dataset: {msg}")]
    Consistency {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("{file}:{line}: parse error: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("transport error (status {status}): {msg}")]
    Transport { status: u16, msg: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("degenerate calibration: output of {block} has zero standard deviation")]
    DegenerateCalibration { block: String },

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("invalid training config: {0}")]
    Config(String),

    #[error("harness error: {0}")]
    Harness(String),

    #[error("render error: {0}")]
    Render(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }
}
