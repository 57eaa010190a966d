use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("affine constraint matrix is rank deficient ({rows} rows, rank {rank})")]
    RankDeficient { rows: usize, rank: usize },

    #[error("bisection bracket invalid: {0}")]
    Bracket(String),

    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
