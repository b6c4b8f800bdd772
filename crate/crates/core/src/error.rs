use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("segment size m = {m} too large for n = {n}")]
    SegmentTooLarge { m: usize, n: usize },
    #[error("degrees of freedom {df} not below sample size {n}")]
    DegreesOfFreedom { df: usize, n: usize },
    #[error("all fits on the tuning grid failed")]
    TuningFailed,
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("density at threshold too small for inference: {0}")]
    DensityHole(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
