use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("degenerate variance: batch norm in train mode needs at least 2 values per channel, got {0}")]
    DegenerateVariance(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite gradient in parameter `{slot}` ({count} non-finite entries)")]
    NonFiniteGradient { slot: String, count: usize },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),

    #[error("checkpoint tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    TensorShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("checkpoint is malformed: {0}")]
    MalformedCheckpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
