use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: axis {axis}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: String,
        actual: String,
    },

    #[error("index error in {op}: index {index} out of range for {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("landmark {index} at ({x:.2}, {y:.2}) lies outside the {width}x{height} crop")]
    LandmarkOutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("unknown facial feature `{0}`")]
    UnknownFeature(String),

    #[error("unknown expression class `{0}`")]
    UnknownExpression(String),

    #[error("line {line}: unknown expression class `{name}`")]
    ManifestClass { line: usize, name: String },

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: corrupt header: {0}")]
    CorruptHeader(String),

    #[error("checkpoint: header hash mismatch")]
    HeaderHashMismatch,

    #[error("checkpoint: payload is {actual} bytes, header declares {expected}")]
    PayloadLength { expected: usize, actual: usize },

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("image format: {0}")]
    ImageFormat(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("samples without landmarks: {}", .0.join(", "))]
    MissingLandmarks(Vec<String>),

    #[error("class mismatch: {0}")]
    ClassMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(
        op: &'static str,
        axis: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
