//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration value (qubit counts, layer counts, empty shards, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad argument to an operation (index out of range, equal control/target, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// Operand shapes disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Input fails a structural validity check (non-Hermitian matrix, feature
    /// out of range, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A power allocation violates the successive-decoding constraint.
    /// `index` is the first violated layer (1-based).
    #[error("infeasible power allocation at layer {index}: {detail}")]
    Infeasible { index: usize, detail: String },

    /// A convergence bound diverges (some decoding probability is zero).
    #[error("bound diverges: {0}")]
    Divergence(String),

    /// Dataset ingestion failure, naming the offending field.
    #[error("ingestion error in {field}: {detail}")]
    Ingestion { field: String, detail: String },

    /// File I/O failure with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
