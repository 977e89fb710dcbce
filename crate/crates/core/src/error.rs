use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is outside its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data violates a contract (empty, ragged, unparseable, wrong labels).
    #[error("data error: {0}")]
    Data(String),

    /// Feature table does not match the schema a model was trained with.
    #[error("schema mismatch: {0}")]
    Schema(String),

    /// Model file is malformed or written by an incompatible format version.
    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
