//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of a forward pass in order; calling
//! [`Tape::backward`] replays the records in exact reverse order and
//! accumulates gradients for every variable that requires them. Parameters
//! live in a [`ParamStore`] outside the tape and are registered per pass,
//! so independent tapes can run against a frozen parameter snapshot.

mod gradcheck;
mod store;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use store::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, VarId};
pub use tensor::{GradBuf, Tensor};

use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TapeError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: unsupported operand rank {rank} (shape {shape:?})")]
    BadRank {
        op: &'static str,
        rank: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of bounds ({bound})")]
    OutOfBounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: empty position set")]
    EmptyPositions { op: &'static str },
    #[error("{op}: operand list is empty")]
    NoOperands { op: &'static str },
    #[error("shape {shape:?} implies {expected} values, got {actual}")]
    BadBuffer {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("finite differences: epsilon {0:e} outside [1e-7, 1e-4]")]
    BadEpsilon(f64),
}
