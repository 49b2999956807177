use thiserror::Error;

/// Errors raised anywhere in the simulator core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward called without a cached forward pass")]
    NoCache,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("capability denied: {0}")]
    Capability(String),
    #[error("unsupported method: {0}")]
    Unsupported(String),
    #[error("missing payload shape: {0}")]
    MissingShape(&'static str),
    #[error("{0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
