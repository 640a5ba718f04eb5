use thiserror::Error;

/// Every failure the engine can report. Variants follow the error kinds named
/// by each operation's contract so callers (and the C ABI) can branch on them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("no source blocks: nothing has been generated yet")]
    NoSource,
    #[error("scheme error: {0}")]
    Scheme(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("incomplete grid: {0}")]
    Incomplete(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
