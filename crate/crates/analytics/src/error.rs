use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {required} observations, got {actual}")]
    TooFewObservations { required: usize, actual: usize },
    #[error("rating matrix is ragged: row {row} has {actual} columns, expected {expected}")]
    RaggedMatrix { row: usize, expected: usize, actual: usize },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
}
