use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("treatment effect of zero has no discrete weight; use mean_slope_total")]
    ZeroDelta,
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("rank-deficient design; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate variable: {0}")]
    Degenerate(String),
    #[error("singular integration path: {0}")]
    SingularPath(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("{op}: {msg}")]
    Numerical { op: &'static str, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn numerical(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Numerical { op, msg: msg.into() }
    }
}
