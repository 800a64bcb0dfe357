use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DepError>;

#[derive(Debug, Error)]
pub enum DepError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error("non-numeric cell {value:?} at row {row}, column {column:?}")]
    NonNumeric {
        row: u64,
        column: String,
        value: String,
    },

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("ragged rows: row {row} has {found} fields, expected {expected}")]
    Ragged {
        row: u64,
        expected: usize,
        found: usize,
    },

    #[error("need at least {min} observations, got {n}")]
    TooFewRows { n: usize, min: usize },

    #[error("data matrix has no columns")]
    NoColumns,

    #[error("invalid block descriptor {descriptor:?}: {reason}")]
    BlockDescriptor { descriptor: String, reason: String },

    #[error("block {0} is empty")]
    EmptyBlock(usize),

    #[error("blocks overlap on column {0}")]
    OverlappingBlocks(usize),

    #[error("column {column} out of range for {ncols} columns")]
    ColumnOutOfRange { column: usize, ncols: usize },

    #[error("number of blocks {d} outside the supported range {min}..={max}")]
    BlockCount { d: usize, min: usize, max: usize },

    #[error("exponent alpha = {0} must lie in (0, 2)")]
    InvalidExponent(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("subset must contain at least two blocks")]
    SubsetTooSmall,

    #[error("unknown block index {index} (sample has {d} blocks)")]
    UnknownBlock { index: usize, d: usize },

    #[error("lag {lag} out of range 1..={max} for a series of length {n}")]
    LagOutOfRange { lag: usize, max: usize, n: usize },

    #[error("window {window} invalid for a series of length {n}: need 2 <= m <= 6 and n - m + 1 >= 10")]
    WindowTooLarge { window: usize, n: usize },

    #[error("zero denominator in AR(1) fit (constant series)")]
    ConstantSeries,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resampling scheme {scheme} is not valid for {method}")]
    IncompatibleScheme { scheme: String, method: String },
}
