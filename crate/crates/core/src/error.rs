use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate record for row {row}, field {field:?}")]
    DuplicateRecord { row: usize, field: String },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("row {row} exceeds row-vocabulary capacity {capacity}")]
    RowCapacity { row: usize, capacity: usize },
    #[error("cannot execute {op}: cell (row {row}, column {column:?}) is not numeric")]
    NonNumericCell {
        op: String,
        row: usize,
        column: String,
    },
    #[error("non-finite activation at decoder step {step}: {what}")]
    NonFinite { step: usize, what: String },
    #[error("template not applicable: {0}")]
    TemplateInapplicable(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Contract(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that come from the filesystem rather than the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
