use thiserror::Error;

/// Errors raised by the library. Indices carried by variants are 0-based;
/// the `Display` output reports them 1-based to match the CLI and CSV headers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-positive entry a_{index} = {value}: every a_k must be finite and > 0")]
    NonPositiveEntry { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero weight at index {}: every weight must be nonzero", .index + 1)]
    ZeroWeight { index: usize },

    #[error("non-finite weight at index {}: {value}", .index + 1)]
    NonFiniteWeight { index: usize, value: f64 },

    #[error("at least {required} weights are required, got {found}")]
    TooFewWeights { required: usize, found: usize },

    #[error("pivot {} is out of range for {n} coordinates", .pivot + 1)]
    BadPivot { pivot: usize, n: usize },

    #[error("dense covariance of dimension {dim} exceeds the configured cap {cap}")]
    TooLarge { dim: usize, cap: usize },

    #[error("scaled determinant recursion overflowed")]
    Overflow,

    #[error("matrix is not numerically positive definite (pivot {index} = {value})")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("only {accepted} proposals fell in the band (at least {required} needed); widen epsilon or add proposals")]
    TooFewAccepted { accepted: u64, required: u64 },

    #[error("insufficient samples: {count} (need at least {required})")]
    InsufficientSamples { count: u64, required: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed input: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
