use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("domain error at line {line}: value {value:?} is outside the domain of attribute {attribute:?}")]
    Domain { line: u64, attribute: String, value: String },

    #[error("missing cell at line {line} for attribute {attribute:?}")]
    MissingCell { line: u64, attribute: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),

    #[error("empty dataset: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("cycle detected in network at attribute {0:?}")]
    Cycle(String),

    #[error("joint table too large: {cells} cells exceeds limit of {limit}")]
    TooLarge { cells: u128, limit: u128 },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("key mismatch: {0}")]
    KeyMismatch(String),

    #[error("incompatible selection: {0}")]
    Incompatible(String),

    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
