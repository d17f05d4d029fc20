use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite score at position {position:?}")]
    NonFiniteScore { position: Vec<f64> },

    #[error("score norm {norm:e} exceeds overflow guard at position {position:?}")]
    ScoreOverflow { norm: f64, position: Vec<f64> },

    #[error("log-density is not finite at the starting position {position:?}")]
    NonFiniteLogDensity { position: Vec<f64> },

    #[error("importance proposal misses support: every log-weight is -inf")]
    ProposalMissesSupport,

    #[error("non-finite velocity for particle {particle} at t = {t}")]
    NonFiniteVelocity { particle: usize, t: f64 },

    #[error("time {t} outside the admissible range {range}")]
    TimeOutOfRange { t: f64, range: &'static str },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
