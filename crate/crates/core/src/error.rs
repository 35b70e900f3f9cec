use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (shape, range, empty input).
    #[error("rejected input: {0}")]
    InvalidInput(String),

    /// A loss, gradient or parameter became NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A PPO minibatch produced a non-finite loss; the update was abandoned.
    #[error("update aborted: non-finite loss in minibatch {minibatch}")]
    AbortUpdate { minibatch: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// The file is shorter than its header claims or its checksum disagrees.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unsupported format version {found} (this build reads {expected})")]
    Version { found: u32, expected: u32 },

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("cannot resume: {0}")]
    Resume(String),

    #[error("metrics out of order: step {step} after step {last}")]
    Ordering { last: u64, step: u64 },

    #[error("malformed record: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn ensure_width(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(invalid(format!("{what}: expected width {expected}, got {got}")));
    }
    Ok(())
}
