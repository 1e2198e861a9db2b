//! Experiment harness binding the skiprnn library: declarative configs,
//! training/evaluation loops with solved criteria and early exit, and
//! byte-deterministic result emission.

pub mod config;
pub mod emit;
pub mod runner;

use std::fmt;

#[derive(Debug)]
pub enum HarnessError {
    /// Invalid configuration. CLI exit code 1.
    Config(String),
    /// Missing or corrupt data. CLI exit code 2.
    Data(String),
    /// Numeric divergence; carries the partial record when one exists.
    /// CLI exit code 3.
    Numeric {
        message: String,
        partial: Option<Box<emit::ResultRecord>>,
    },
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::Numeric { .. } => 3,
            HarnessError::Io(_) => 1,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(m) => write!(f, "configuration error: {m}"),
            HarnessError::Data(m) => write!(f, "data error: {m}"),
            HarnessError::Numeric { message, .. } => write!(f, "numeric error: {message}"),
            HarnessError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<skiprnn::Error> for HarnessError {
    fn from(e: skiprnn::Error) -> Self {
        match e {
            skiprnn::Error::Config(m) => HarnessError::Config(m),
            skiprnn::Error::Numeric(m) => HarnessError::Numeric {
                message: m,
                partial: None,
            },
            skiprnn::Error::Data(m) => HarnessError::Data(m),
            skiprnn::Error::Io(m) => HarnessError::Io(m),
        }
    }
}
