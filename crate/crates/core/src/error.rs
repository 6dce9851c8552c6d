//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A data file could not be parsed; carries the 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An operation that requires data received none.
    #[error("no entries")]
    Empty,

    /// Shapes of two operands do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A parameter is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A row of the rating matrix has no observed entries.
    #[error("row {0} has no observed entries")]
    EmptyRow(usize),

    /// A column of the rating matrix has no observed entries.
    #[error("column {0} has no observed entries")]
    EmptyCol(usize),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
