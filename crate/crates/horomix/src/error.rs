use thiserror::Error;

/// Errors surfaced by the lab. The CLI maps these onto exit codes:
/// configuration problems exit 2, resource exhaustion exits 3, everything
/// else that aborts a run exits 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("model violation: {0}")]
    Model(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI: 2 config, 3 resource, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Resource(_) => 3,
            _ => 1,
        }
    }
}
