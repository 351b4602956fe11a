use thiserror::Error;

use crate::diffcore::DiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate shared matrix (log|det| = {log_abs_det})")]
    DegenerateSharedMatrix { log_abs_det: f64 },
    #[error("non-PD noise covariance requested: {0}")]
    NonPd(String),
    #[error("sequence length {0} is too short, need at least 2 steps")]
    SequenceTooShort(usize),
    #[error("non-finite {what}")]
    NonFinite { what: String },
    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
