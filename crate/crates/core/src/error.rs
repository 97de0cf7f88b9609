use thiserror::Error;

/// Errors produced by scenario handling and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or incomplete scenario input.
    #[error("config error: {0}")]
    Config(String),

    /// A model invariant does not hold for the supplied data.
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),

    /// Tabulated data does not match the grid.
    #[error("shape mismatch for `{key}`: expected {expected} values, got {got}")]
    Shape {
        key: String,
        expected: usize,
        got: usize,
    },

    /// Two fields that must share a grid or layout do not.
    #[error("layout mismatch: {0}")]
    Layout(String),

    /// A solver produced a non-finite value.
    #[error("non-finite value in {what} at (i={i}, j={j}, k={k})")]
    NonFinite {
        what: &'static str,
        i: usize,
        j: usize,
        k: usize,
    },

    /// Operation not defined for the growth case at hand.
    #[error("{0}")]
    Undefined(String),

    /// Internal numerical failure (should not happen for valid input).
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(vec![msg.into()])
    }

    /// Process exit code: 1 for input errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::Internal(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
