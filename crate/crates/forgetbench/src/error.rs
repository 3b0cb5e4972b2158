//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up; names the offending place.
    #[error("shape error in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// A caller-supplied value violates an operation precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// A data file is malformed.
    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },

    /// Dataset-level problem (empty class, inconsistent split, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Sessions presented out of order or an operation called mid-protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Operation called before the model reached a usable state.
    #[error("state error: {0}")]
    State(String),

    /// Evaluation cannot be computed (e.g. a class with no test examples).
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("record error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
