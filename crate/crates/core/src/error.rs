use thiserror::Error;

/// Errors raised by model construction, filters and studies.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("sensor transform is singular: {0}")]
    SingularTransform(String),
    #[error("cannot certify stability constants: {0}")]
    Uncertified(String),
    #[error("time mismatch: {0} vs {1}")]
    TimeMismatch(f64, f64),
    #[error("ensemble must contain at least one particle")]
    EmptyEnsemble,
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
