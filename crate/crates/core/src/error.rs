use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{0}: loss must be a scalar, got shape {1:?}")]
    NonScalarLoss(&'static str, Vec<usize>),

    #[error("label {label} out of range for {classes} classes (record {index})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        index: usize,
    },

    #[error("genotype spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("invalid genotype: {0}")]
    InvalidGenotype(String),

    #[error("config field `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("dataset file at byte {offset}: {msg}")]
    DatasetFormat { offset: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
