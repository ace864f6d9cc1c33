use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 verification failure, 2 usage error,
    /// 3 i/o error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::VerificationFailed(_) => 1,
            Error::InvalidArgument(_) | Error::Config(_) => 2,
            Error::Io(_) | Error::CheckpointFormat(_) => 3,
            _ => 1,
        }
    }
}
