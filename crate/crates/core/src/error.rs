use thiserror::Error;

pub type Result<T> = std::result::Result<T, QslError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QslError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A candidate read data at or after the time it was being fit for.
    #[error("prequential violation: candidate `{candidate}` read batch {read_t} while fitting for time {boundary}")]
    PrequentialViolation {
        candidate: String,
        boundary: usize,
        read_t: usize,
    },
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(QslError::InvalidArgument(msg.into()))
}
