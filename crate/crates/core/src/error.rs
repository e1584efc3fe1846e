use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A closed-form expression was requested outside the parameter regime where it exists.
    #[error("regime precondition violated: {0}")]
    Regime(String),

    #[error("embedding count overflowed 128 bits")]
    CountOverflow,

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("graph has {vertices} vertices, brute force is capped at {cap}")]
    SizeCap { vertices: usize, cap: usize },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
