use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    ArityMismatch {
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("unknown registry problem `{0}`")]
    UnknownProblem(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),

    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("{0}")]
    Invalid(String),
}

impl CoreError {
    pub fn integration(time: f64, reason: impl Into<String>) -> Self {
        CoreError::Integration {
            time,
            reason: reason.into(),
        }
    }
}
