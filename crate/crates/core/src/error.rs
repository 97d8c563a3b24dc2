use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("logistic loss requires a label in {{-1, +1}}, got {0}")]
    InvalidLabel(f64),

    #[error("empty input")]
    EmptyInput,

    #[error("kink margin {margin:e} does not exceed the required {required:e}")]
    KinkTooClose { margin: f64, required: f64 },

    #[error("coverage condition violated: {0}")]
    CoverageViolated(String),

    #[error("block {block} has no Lipschitz certificate: {reason}")]
    UnsupportedInner { block: usize, reason: String },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("gradient norm {0:e} is too large for a critical point")]
    NotCritical(f64),

    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
