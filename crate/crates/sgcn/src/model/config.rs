//! Architecture hyperparameters shared by parameter construction, the
//! forward pass, checkpoints, and the CLI.

use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::scalar::Precision;

/// How raw attention scores become a normalized adjacency column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyMode {
    /// relu on the scaled scores, then divide each column by its sum.
    /// Negative scores become exact zeros, so edges can be fully masked.
    ReluMean,
    /// Column softmax over valid source positions; every valid entry stays
    /// strictly positive.
    Softmax,
}

impl AdjacencyMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu-mean" | "relu_mean" => Some(AdjacencyMode::ReluMean),
            "softmax" => Some(AdjacencyMode::Softmax),
            _ => None,
        }
    }
}

impl std::fmt::Display for AdjacencyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdjacencyMode::ReluMean => "relu-mean",
            AdjacencyMode::Softmax => "softmax",
        })
    }
}

/// Component-removal switches. All false is the full model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Classify straight off the context encoder; no graph layers.
    pub no_sgcn: bool,
    /// Replace the BiLSTM with a learned affine projection to the hidden width.
    pub no_lstm: bool,
    /// Use only the last graph layer's output instead of concatenating
    /// the encoder output with every layer's output.
    pub no_layer_agg: bool,
}

impl AblationFlags {
    pub fn parse(s: &str) -> Option<Self> {
        let mut f = AblationFlags::default();
        match s {
            "no_sgcn" => f.no_sgcn = true,
            "no_lstm" => f.no_lstm = true,
            "no_layer_agg" => f.no_layer_agg = true,
            "none" | "" => {}
            _ => return None,
        }
        Some(f)
    }

    pub fn label(&self) -> &'static str {
        if self.no_sgcn {
            "no_sgcn"
        } else if self.no_lstm {
            "no_lstm"
        } else if self.no_layer_agg {
            "no_layer_agg"
        } else {
            "none"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub ner_dim: usize,
    /// Hidden width d: the encoder output, every graph layer, and the
    /// aggregated representation all live in R^d.
    pub hidden_dim: usize,
    /// Graph layer count k.
    pub sgcn_layers: usize,
    /// Attention heads h per layer; each contributes d/h output columns.
    pub heads: usize,
    /// Inverted-dropout rate on the encoder output and each layer output.
    pub dropout: f64,
    pub adjacency_mode: AdjacencyMode,
    pub ablation: AblationFlags,
    pub relation_count: usize,
    pub precision: Precision,
    /// Parameter-initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 300,
            pos_dim: 30,
            ner_dim: 30,
            hidden_dim: 300,
            sgcn_layers: 2,
            heads: 3,
            dropout: 0.5,
            adjacency_mode: AdjacencyMode::ReluMean,
            ablation: AblationFlags::default(),
            relation_count: 42,
            precision: Precision::F32,
            seed: 1,
        }
    }
}

impl ModelConfig {
    /// Width of the concatenated word+PoS+NER feature vector.
    pub fn input_dim(&self) -> usize {
        self.word_dim + self.pos_dim + self.ner_dim
    }

    /// Per-head propagation output width.
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    /// Per-direction LSTM state width.
    pub fn lstm_dim(&self) -> usize {
        self.hidden_dim / 2
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.word_dim == 0 || self.pos_dim == 0 || self.ner_dim == 0 {
            return fail("embedding dims must be positive".into());
        }
        if self.hidden_dim == 0 {
            return fail("hidden_dim must be positive".into());
        }
        if self.heads == 0 {
            return fail("need at least one head".into());
        }
        if self.sgcn_layers == 0 {
            return fail("need at least one graph layer".into());
        }
        if self.hidden_dim % self.heads != 0 {
            return fail(format!(
                "hidden_dim {} not divisible by heads {}",
                self.hidden_dim, self.heads
            ));
        }
        if !self.ablation.no_lstm && self.hidden_dim % 2 != 0 {
            return fail(format!(
                "hidden_dim {} must be even to split across LSTM directions",
                self.hidden_dim
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.relation_count < 2 {
            return fail("relation_count must be at least 2".into());
        }
        let exclusive = [
            self.ablation.no_sgcn,
            self.ablation.no_lstm,
            self.ablation.no_layer_agg,
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if exclusive > 1 {
            return fail("at most one ablation flag may be set".into());
        }
        Ok(())
    }
}
