//! SGD training loop: global-norm gradient clipping, stepwise learning-rate
//! decay, early stopping on dev micro-F1, and binary checkpoints.

mod checkpoint;
mod sgd;
mod trainer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, TrainState, CHECKPOINT_VERSION,
};
pub use sgd::{sgd_step, TrainConfig};
pub use trainer::{batch_loss, predict_labels, train, EpochRecord, TrainOutcome};

use thiserror::Error;

use crate::autodiff::TapeError;
use crate::data::DataError;
use crate::eval::EvalError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("bad training configuration: {0}")]
    Config(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("non-finite gradient in parameter group `{0}`; aborting the run")]
    NonFiniteGrad(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint version {found} not supported (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },
    #[error("checkpoint holds 64-bit values; pass the narrowing flag to load them as 32-bit")]
    NarrowingRequired,
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
}
