use thiserror::Error;

pub type Result<T> = std::result::Result<T, OplimError>;

#[derive(Debug, Error)]
pub enum OplimError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("construction failed: {0}")]
    ConstructionFailed(String),

    #[error("truncation A_{n} is not invertible")]
    NotInvertible { n: usize },

    #[error("row-finite horizon undefined for k = {k}: symbol is not row-finite")]
    HorizonUndefined { k: usize },

    #[error("integrand returned {count} non-finite values (tolerated: {tolerated})")]
    IntegrandError { count: u64, tolerated: u64 },

    #[error("second moment diverges at n = {n}: ||A_n|| >= sqrt(2)")]
    MomentDivergent { n: usize },

    #[error("variant mismatch: {0}")]
    VariantMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("symbol or measure defined for {available} coordinates, {requested} requested")]
    DimensionExceeded { available: usize, requested: usize },

    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },

    #[error("unknown identifier `{id}`; known: {known}")]
    UnknownId { id: String, known: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl OplimError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        OplimError::InvalidParameter(msg.into())
    }
}
