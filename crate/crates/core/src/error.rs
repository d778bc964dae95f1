use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("precision target not reached: {0}")]
    Precision(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("divergent series: {0}")]
    Divergence(String),
    #[error("enumeration budget exceeded: {0}")]
    Budget(String),
    #[error("degenerate ratio estimate: {0}")]
    DegenerateRatio(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
