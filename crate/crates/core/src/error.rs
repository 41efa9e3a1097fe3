use thiserror::Error;

use crate::model::LifecycleState;

/// Errors raised anywhere in the FlexOffer engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlexError {
    #[error("slice index {index} out of range 1..={len}")]
    Range { index: usize, len: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("shape mismatch: expected {expected} time units, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("missing mandatory attribute {attribute}")]
    MissingAttribute { attribute: &'static str },

    #[error("parse error in {field}: {message}")]
    Parse { field: String, message: String },

    #[error("value {value} outside domain [{lower}, {upper}]")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid transition: event {event} is not allowed in state {state}")]
    InvalidTransition {
        state: LifecycleState,
        event: &'static str,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("retention undefined: exact profit is zero")]
    UndefinedRatio,

    #[error("solver gave up after {0} pivots")]
    IterationLimit(usize),
}

pub type Result<T> = std::result::Result<T, FlexError>;

impl FlexError {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        FlexError::Parse {
            field: field.into(),
            message: message.into(),
        }
    }
}
