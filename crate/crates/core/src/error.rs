use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Library-wide error type. Validation failures carry enough context to
/// point at the offending view, slot, or file line.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate feature: zero norm in {context}")]
    DegenerateFeature { context: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("missing view {view} in {context}")]
    MissingView { view: String, context: String },

    #[error("unknown view {view} in {context}")]
    UnknownView { view: String, context: String },

    #[error("feature not unit norm in {context}: norm = {norm}")]
    NotUnitNorm { context: String, norm: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no candidate slots to mine after exclusion")]
    EmptyCandidates,

    #[error("batch of {batch} entries exceeds bank capacity {capacity}")]
    BatchExceedsCapacity { batch: usize, capacity: usize },

    #[error("slot {slot} out of range: {occupied} slots occupied")]
    SlotOutOfRange { slot: usize, occupied: usize },

    #[error("duplicate instance id {0}")]
    DuplicateId(String),

    #[error("unknown instance id {0}")]
    UnknownInstance(String),

    #[error("unknown class {0}")]
    UnknownClass(i64),

    #[error("inconsistent confusability map: {0}")]
    InconsistentConfusability(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    /// Adapter for `map_err` on filesystem calls.
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
