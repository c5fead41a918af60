use thiserror::Error;

/// Errors raised by the solver library and the CLI front end.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates a documented invariant.
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument lies outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    /// The problem is outside what the requested routine supports.
    #[error("unsupported problem: {0}")]
    Unsupported(String),
    /// A user-supplied function produced a non-finite value.
    #[error("problem error: {0}")]
    Problem(String),
    /// A floating-point quantity overflowed; the affected sample is poisoned.
    #[error("numeric overflow in {0}")]
    Overflow(&'static str),
    #[error("run failed: {0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by the caller's configuration rather than by a run.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Domain(_) | Error::Parse { .. } | Error::Unsupported(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
