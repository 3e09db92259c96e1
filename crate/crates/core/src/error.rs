use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid region count k = {k} for a {width}x{height} image")]
    InvalidK { k: usize, width: usize, height: usize },
    #[error("compactness must be positive and finite, got {0}")]
    InvalidCompactness(f64),
    #[error("region pixel ({row}, {col}) outside {width}x{height} image")]
    OutOfBounds {
        row: usize,
        col: usize,
        width: usize,
        height: usize,
    },
    #[error("histogram bin mismatch: {0} vs {1} bins per channel")]
    BinMismatch(usize, usize),
    #[error("{regions} regions exceed the node budget of {nodes}")]
    TooManyRegions { regions: usize, nodes: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("adjacency is not symmetric at ({0}, {1})")]
    AsymmetricInput(usize, usize),
    #[error("negative edge weight at ({0}, {1})")]
    NegativeWeight(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no valid nodes to reduce over")]
    EmptyMask,
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("graph {source_id} has task {found}, expected {expected}")]
    TaskMismatch {
        source_id: String,
        expected: String,
        found: String,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Decode(other.to_string()),
        }
    }
}
