use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("corrupt sparse data: {0}")]
    Corruption(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("position out of range: {0}")]
    OutOfRange(String),
    #[error("simulation stalled at cycle {cycle}: {trace}")]
    Deadlock { cycle: u64, trace: String },
}

pub type Result<T> = std::result::Result<T, SimError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SimError::Config(msg.into()))
}
