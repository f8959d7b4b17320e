use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },

    #[error("{op}: domain error: {detail}")]
    DomainError { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("split fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),

    #[error("k-means needs 1 <= k <= n, got k={k}, n={n}")]
    InvalidK { k: usize, n: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("recognition sampling needs the future sequence y")]
    MissingY,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: missing fields {missing:?}")]
    Schema { line: usize, missing: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
