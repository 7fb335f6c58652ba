use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parity-check matrix has no nonzero rows")]
    ZeroParityMatrix,

    #[error("code has no information bits after dropping dependent checks (rank {rank}, length {d})")]
    NoInformationBits { rank: usize, d: usize },

    #[error("codebook enumeration needs 2^{k} words, above the cap of 2^{cap}")]
    CodebookTooLarge { k: usize, cap: usize },

    #[error("malformed alist: {0}")]
    Alist(String),

    #[error("covariance matrix is singular even after regularization")]
    SingularCovariance,

    #[error("{rounds} BP rounds do not satisfy the cycle-free condition for girth {girth} (need 2·rounds < girth)")]
    RoundsExceedGirth { rounds: usize, girth: usize },

    #[error("non-finite value in AMP iterate at iteration {0}")]
    NonFinite(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
