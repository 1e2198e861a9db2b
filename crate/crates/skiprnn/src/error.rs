use std::fmt;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid configuration: mismatched shapes, bad hyperparameters, empty layer sets.
    Config(String),
    /// Numeric failure: non-finite values observed, with the offending operation named.
    Numeric(String),
    /// Data loading or format problems (bad magic numbers, truncated files).
    Data(String),
    /// Underlying I/O failure.
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
