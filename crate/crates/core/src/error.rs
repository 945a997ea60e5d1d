use thiserror::Error;

pub type Result<T> = std::result::Result<T, AglaError>;

#[derive(Debug, Error)]
pub enum AglaError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("head mode error: {0}")]
    Mode(String),

    #[error("label {label} out of range for {width} logits")]
    Index { label: usize, width: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear algebra error: {0}")]
    LinearAlgebra(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AglaError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        AglaError::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
