use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// `e^{|x|^2/2}` would overflow the feature map.
    #[error("squared norm {norm_sq} exceeds the feature-map overflow guard ({limit})")]
    OverflowGuard { norm_sq: f64, limit: f64 },

    #[error("invalid index: {0}")]
    InvalidIndex(String),

    /// The kernel normalization `1^T phi(K)^T phi(q)` vanished.
    #[error("kernel normalization is degenerate (denominator {denominator:e})")]
    NormalizationDegenerate { denominator: f64 },

    #[error("candidate set is empty")]
    EmptyCandidateSet,

    #[error("mean embedding has zero norm")]
    DegenerateEmbedding,

    #[error("collapse detection needs at least {needed} records, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("invalid donor: {0}")]
    InvalidDonor(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("construction failed: {0}")]
    ConstructionFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
