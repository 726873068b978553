//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide error. The three handmade variants map onto the CLI exit
/// codes (2 usage, 3 data, 4 numeric); wrapped I/O and parse errors are
/// treated as data errors.
#[derive(Error, Debug)]
pub enum Error {
    /// Malformed arguments, shapes, indices, or other caller mistakes.
    #[error("input error: {0}")]
    Input(String),
    /// A file or dataset violates its documented format.
    #[error("data error: {0}")]
    Data(String),
    /// A numeric procedure failed (divergence, non-finite values).
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI surface.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) => 2,
            Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand constructors used all over the crate.
pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn data_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Data(msg.into()))
}
