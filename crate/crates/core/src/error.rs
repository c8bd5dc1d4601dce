use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the pipeline library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("truncated data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry mismatch on axis {axis}: {a} vs {b}")]
    GeometryMismatch { axis: char, a: usize, b: usize },

    #[error("registration error: {0}")]
    Registration(String),

    #[error("kind error: {0}")]
    Kind(String),

    #[error("degenerate statistics: standard deviation {0:e} is below threshold")]
    DegenerateStatistics(f64),

    #[error("empty mask")]
    EmptyMask,

    #[error("bounding box out of range: {0}")]
    Bounds(String),

    #[error("crop record mismatch: {0}")]
    RecordMismatch(String),

    #[error("unknown labels: {0:?}")]
    UnknownLabels(Vec<u32>),

    #[error("invalid merge map: {0}")]
    InvalidMergeMap(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("empty input")]
    EmptyInput,

    #[error("validation error in `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("rule conflict: [{0}, {1}] overlaps [{2}, {3}]")]
    RuleConflict(f64, f64, f64, f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
