use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample size must be positive")]
    EmptySample,
    #[error("count {k} exceeds trials {n}")]
    CountExceedsTrials { k: u64, n: u64 },
    #[error("confidence level {0} outside (0, 1)")]
    BadLevel(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("need at least {need} vectors per set, got {got}")]
    TooFewVectors { need: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate agreement: expected consistency is 1")]
    DegenerateConsistency,
    #[error("query vector has zero norm")]
    ZeroQuery,
    #[error("no candidate vectors left after filtering")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    ZeroK,
}
