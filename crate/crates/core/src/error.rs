//! Error taxonomy shared by the whole crate.
//!
//! Three buckets, matching the CLI exit codes: argument errors (exit 1),
//! I/O and format errors (exit 2).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed values violating a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Underlying I/O failure (file missing, unreadable, ...).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Structurally bad input data (checkpoint, cache, config, raw file).
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code this error maps to (`1` argument, `2` I/O or format).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) => 1,
            Error::Io(_) | Error::Format(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Early-return with [`Error::Argument`] when `cond` does not hold.
macro_rules! ensure_arg {
    ($cond:expr, $($fmt:tt)*) => {
        if $cond {
        } else {
            return Err($crate::error::Error::Argument(format!($($fmt)*)));
        }
    };
}
pub(crate) use ensure_arg;
