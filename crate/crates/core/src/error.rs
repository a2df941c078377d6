use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{what} did not converge after {iterations} iterations (last change {last_change:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("resolvent series is not contracting (term ratio {ratio:.6} at term {term})")]
    NotContraction { term: usize, ratio: f64 },

    #[error(
        "well-posedness lost{}: scaled operator norm {scaled_norm:.6} exceeds gamma0 = {gamma0}",
        sample.map(|i| format!(" at sample {i}")).unwrap_or_default()
    )]
    WellPosednessLost {
        scaled_norm: f64,
        gamma0: f64,
        sample: Option<usize>,
    },

    #[error("degenerate data: smallest eigenvalue of the limit kernel is {lambda0:e}")]
    DegenerateData { lambda0: f64 },

    #[error("row {row} is not unit-norm (norm {norm})")]
    NonUnitRow { row: usize, norm: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("ragged rows: line {line} has {got} fields, expected {expected}")]
    RaggedRows { line: usize, expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("bad IDX magic number {found:#010x} in {path:?} (expected {expected:#010x})")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("IDX count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("class {class} has {available} samples, {requested} requested")]
    InsufficientSamples {
        class: u8,
        available: usize,
        requested: usize,
    },

    #[error("row {0} is zero and cannot be normalized")]
    ZeroRow(usize),

    #[error("could not separate parallel rows after {passes} passes")]
    CannotSeparate { passes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
