use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] bms_core::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("model kind {model} does not match dataset kind {data}")]
    KindMismatch { model: String, data: String },
    #[error("unsupported container: {0}")]
    VersionMismatch(String),
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("index {index} out of range for {len} examples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("training stopped on a non-finite value at step {step}; last good checkpoint: {checkpoint:?}")]
    Numerical {
        step: usize,
        checkpoint: Option<PathBuf>,
    },
    #[error("{0}")]
    Failed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
