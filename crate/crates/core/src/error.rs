use thiserror::Error;

/// Everything that can go wrong while validating, evaluating or simulating.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("ordering violation: {0}")]
    OrderingViolation(String),

    #[error("range violation: {0}")]
    RangeViolation(String),

    #[error("constant A is undefined: H*(c{line}*t_star + q{line}) equals c{line}*t_star")]
    DegenerateCase2Constant { line: usize },

    #[error("T_u = {t0} is constant and H = {hurst} < 1/2; the growth condition fails, only two-sided bounds are available")]
    NonconformingGrowth { t0: f64, hurst: f64 },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("missing constant: {0}")]
    MissingConstant(String),

    #[error("hypothesis violation: {0}")]
    HypothesisViolation(String),

    #[error("regime error: {0}")]
    RegimeError(String),

    #[error("embedding failure: {0}")]
    EmbeddingFailure(String),

    #[error("span S = {span} must exceed the sojourn threshold x = {x}")]
    SpanTooSmall { span: f64, x: f64 },

    #[error("sojourn Piterbarg integral diverges: {0}")]
    NonIntegrable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
