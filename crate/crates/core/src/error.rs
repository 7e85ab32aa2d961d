use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid template geometry: {0}")]
    Geometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at element {0}")]
    NonFinite(usize),

    #[error("degenerate template: {0}")]
    DegenerateTemplate(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("rotation set must contain at least one rotation")]
    EmptyRotationSet,

    #[error("invalid quaternion: {0}")]
    Quaternion(String),

    #[error("too few integration samples: {got} < {min}")]
    InsufficientSamples { got: usize, min: usize },

    #[error("block geometry: {0}")]
    BlockGeometry(String),

    #[error("grid layout: {0}")]
    Layout(String),

    #[error("no matched detections")]
    NoMatches,

    #[error("{path}: format error at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("{path}: unsupported MRC mode {mode} (only mode 2, float32, is supported)")]
    UnsupportedMode { path: PathBuf, mode: i32 },

    #[error("{path}: truncated file: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("tensorial template integrity: {0}")]
    Integrity(String),

    #[error("incompatible tensorial template: {0}")]
    Incompatible(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
