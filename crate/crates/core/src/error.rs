//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An operation was called outside its contract (e.g. backward on a
    /// non-scalar output).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Parameter layouts disagree (flatten/unflatten, aggregation).
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    /// An input collection was empty where at least one element is required.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A resource pool ran out of capacity.
    #[error("capacity exhausted: {0}")]
    Capacity(String),

    /// Configuration validation failed; every violated constraint is listed.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// A file could not be parsed; carries location information.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Checkpoint or artifact file is malformed or does not match.
    #[error("artifact error: {0}")]
    Artifact(String),

    /// A client's training or evaluation failed; carries the context.
    #[error("round {round}, client {client}: {source}")]
    Client {
        round: usize,
        client: usize,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
