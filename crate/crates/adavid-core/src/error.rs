use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("invalid width: {0}")]
    InvalidWidth(String),

    #[error("degenerate norm: {0}")]
    DegenerateNorm(String),

    #[error("flops counter overflow")]
    CounterOverflow,

    #[error("missing cache entries: {0:?}")]
    MissingCache(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("non-deterministic function: {0}")]
    NonDeterministic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
