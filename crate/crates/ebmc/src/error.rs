/// Crate-wide error type.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// Input violates a documented precondition (bad shapes aside).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dimensions are incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A symmetric positive-definite factorization failed.
    #[error("numerical conditioning failure: {0}")]
    Conditioning(String),

    /// A matrix is singular to working precision.
    #[error("rank-deficient matrix: {0}")]
    RankDeficient(String),
}

pub type Result<T> = std::result::Result<T, Error>;
