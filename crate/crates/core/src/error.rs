use thiserror::Error;

use crate::format::ValidationReport;

/// Errors from the model and the numerical operators. State numbers in
/// messages are 1-based.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state {state} out of range 1..={n}")]
    StateOutOfRange { state: usize, n: usize },
    #[error("action index {index} out of range at state {state} ({available} actions)")]
    ActionOutOfRange { state: usize, index: usize, available: usize },
    #[error("unknown action `{label}` at state {state}")]
    UnknownAction { state: usize, label: String },
    #[error("non-finite cost entry at state {state}")]
    NonFiniteCost { state: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Errors from [`crate::format::load_instance`].
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid instance: {0}")]
    Invalid(ValidationReport),
}
