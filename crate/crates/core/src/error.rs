use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("size guard exceeded for {what}: requested {requested}, limit {limit}")]
    SizeGuard {
        what: String,
        requested: usize,
        limit: usize,
    },

    #[error("diverging series: betabar[{index}] = {value} is not positive")]
    DivergingSeries { index: usize, value: f64 },

    #[error("missing entry: {0}")]
    MissingEntry(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("wrong regime: {0}")]
    Regime(String),

    #[error("truncation too shallow, increase m: {0}")]
    IncreaseTruncation(String),

    #[error("series budget exhausted: {0}")]
    Budget(String),

    #[error("functional is not tracial at scope: {0}")]
    NotTracial(String),

    #[error("functional failed the scope check: {0}")]
    ScopeEscalation(String),

    #[error("invariant violated (implementation fault): {0}")]
    InvariantFault(String),
}
