use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("wav format: {0}")]
    WavFormat(String),

    #[error("sample rate mismatch: file has {found} Hz, expected {expected} Hz")]
    RateMismatch { found: u32, expected: u32 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("degenerate source: {0}")]
    DegenerateSource(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("infeasible parameter budget: {0}")]
    InfeasibleBudget(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training aborted: {0}")]
    TrainAbort(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
