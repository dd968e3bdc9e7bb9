use thiserror::Error;

use crate::seq::Token;

/// Errors produced by environments, learners and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("token {token} out of range for vocabulary of size {n}")]
    TokenOutOfRange { token: Token, n: usize },

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("sequence is not complete (must end with eos)")]
    Incomplete,

    #[error("sequence length {len} exceeds depth bound {max}")]
    TooLong { len: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("enumeration of {needed} candidates exceeds cap {cap}")]
    CapExceeded { needed: u128, cap: u128 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("gram matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("optimum is not available for this environment: {0}")]
    NoOptimum(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
