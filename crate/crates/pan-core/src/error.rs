//! Error type shared by the numeric modules.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by tensor ops, model construction, and training.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Incompatible operand shapes; carries both dim lists.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A structural precondition failed (bad axis, non-symmetric adjacency, ...).
    Invalid(String),
    /// A non-finite value surfaced where the contract forbids it.
    NonFinite { context: String },
    /// Loss became NaN during training; identifies the offending batch.
    NanLoss { epoch: usize, batch: usize },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            CoreError::Invalid(msg) => write!(f, "{msg}"),
            CoreError::NonFinite { context } => write!(f, "non-finite value in {context}"),
            CoreError::NanLoss { epoch, batch } => {
                write!(f, "NaN loss at epoch {epoch}, batch {batch}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

impl CoreError {
    pub fn invalid(msg: impl fmt::Display) -> Self {
        CoreError::Invalid(alloc::format!("{msg}"))
    }
}
