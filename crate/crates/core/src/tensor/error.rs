use thiserror::Error;

use super::Shape;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: {axis} axis mismatch, expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: shapes {lhs} and {rhs} differ")]
    ShapeMismatch { op: &'static str, lhs: Shape, rhs: Shape },

    #[error("{op}: degenerate shape: {reason}")]
    Degenerate { op: &'static str, reason: String },

    #[error("tensor {shape} needs {expected} values, got {actual}")]
    DataLength {
        shape: Shape,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: expected {expected} operands, got {actual}")]
    Arity {
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("no gradient rule for {0}")]
    Unsupported(String),

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
