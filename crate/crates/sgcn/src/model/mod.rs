//! The C-SGCN architecture: feature embedding, BiLSTM context encoding,
//! self-determined adjacency with per-head graph propagation, layer
//! aggregation, and the pooled relation classifier.

mod attention;
mod config;
mod encoder;
mod network;
mod params;

pub use attention::{
    gcn_propagate, sgcn_layer, self_determined_adjacency, Activation, EPS_DEN,
};
pub use config::{AblationFlags, AdjacencyMode, ModelConfig};
pub use encoder::bilstm_encode;
pub use network::{
    aggregate_layers, classify, embed_tokens, forward_batch, forward_example, AdjacencyStack,
    BatchOutput, ExampleView, ForwardOutput,
};
pub use params::{EncoderIds, HeadIds, LayerIds, LstmCellIds, ModelParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TapeError, VarId};
use crate::scalar::Scalar;

/// Inverted dropout: zeroes each value with probability `rate` and scales
/// survivors by 1/(1-rate), so eval needs no rescaling. Owns its RNG so a
/// training step's draws are reproducible from the seed alone.
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply<S: Scalar>(
        &mut self,
        tape: &mut Tape<S>,
        v: VarId,
    ) -> Result<VarId, TapeError> {
        if self.rate == 0.0 {
            return Ok(v);
        }
        let keep = S::from_f64(1.0 / (1.0 - self.rate));
        let factors = tape
            .values(v)
            .iter()
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        tape.mul_values(v, factors)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("span {start}..{end} invalid for a sequence with {valid} valid of {len} positions")]
    BadSpan {
        start: usize,
        end: usize,
        valid: usize,
        len: usize,
    },
    #[error("sequence length must be at least 1")]
    EmptySequence,
    #[error("layer {layer}/head {head} out of range for {layers} layers with {heads} heads")]
    LayerHeadRange {
        layer: usize,
        head: usize,
        layers: usize,
        heads: usize,
    },
}
