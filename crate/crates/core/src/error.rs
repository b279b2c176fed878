use thiserror::Error;

/// Errors raised by the estimation pipeline and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A matrix that must have full column rank is numerically singular.
    #[error("rank deficient matrix (singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("power iteration did not converge within {iters} iterations")]
    NoConvergence { iters: usize },

    #[error("input matrix is identically zero")]
    ZeroInput,

    #[error("invalid dictionary grid: {0}")]
    InvalidGrid(String),

    #[error("unsupported modulation order {0}")]
    InvalidOrder(usize),

    /// The stacked precoder cannot separate users: T < K(S+1).
    #[error("separability violated: T = {coherence_len} < K(S+1) = {required}")]
    SeparabilityViolated { coherence_len: usize, required: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("every dictionary atom is already in the support")]
    Exhausted,

    /// The estimated pilot entry is too small to recover the phase.
    #[error("estimated pilot entry is zero, phase unrecoverable")]
    ZeroPilotEstimate,

    #[error("residual threshold not reached after {0} iterations")]
    MaxItersExceeded(usize),

    #[error("data estimate has vanishing norm")]
    DegenerateData,

    #[error("channel estimate has vanishing norm")]
    DegenerateChannel,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
