use std::io;

use thiserror::Error;

pub type Result<T, E = UqError> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum UqError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("non-finite value produced at layer {layer}: {detail}")]
    Numeric { layer: usize, detail: String },

    #[error("training diverged after epoch {last_finite_epoch} (loss became non-finite)")]
    Diverged { last_finite_epoch: usize },

    #[error("parse error at byte offset {offset}: {detail}")]
    Parse { offset: u64, detail: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("ensemble members {failed:?} failed: {detail}")]
    Ensemble { failed: Vec<usize>, detail: String },

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("unsupported class count {0}: at least 3 classes are required")]
    UnsupportedClassCount(usize),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("calibration target unachievable: {detail} (best achievable {best})")]
    Calibration { detail: String, best: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl UqError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        UqError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
