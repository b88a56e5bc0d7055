//! Parameter construction. Creation order is fixed so checkpoints, SGD, and
//! gradient checks all see the same canonical tensor sequence, and every
//! tensor's init stream is seeded independently of the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::data::{Vocabulary, PAD_ID};
use crate::model::{ModelConfig, ModelError};
use crate::scalar::Scalar;
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy)]
pub struct LstmCellIds {
    /// Input-to-gates map, `[input_dim × 4H]`, gate order i, f, g, o.
    pub w_ih: ParamId,
    /// State-to-gates map, `[H × 4H]`.
    pub w_hh: ParamId,
    /// Gate bias, `[4H]`.
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub enum EncoderIds {
    Bilstm { fw: LstmCellIds, bw: LstmCellIds },
    /// The no-LSTM ablation: affine projection input_dim → d.
    Projection { w: ParamId, b: ParamId },
}

#[derive(Debug, Clone, Copy)]
pub struct HeadIds {
    /// Source-side attention map, `[d × d]`.
    pub att_k: ParamId,
    /// Target-side attention map, `[d × d]`.
    pub att_q: ParamId,
    /// Propagation weights, `[d × d/h]`.
    pub gcn_w: ParamId,
    /// Propagation bias, `[d/h]`.
    pub gcn_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct LayerIds {
    pub heads: Vec<HeadIds>,
}

/// All trainable tensors plus typed handles into the store. Cloning shares
/// value buffers, so parameter snapshots cost handles, not matrices.
#[derive(Debug, Clone)]
pub struct ModelParams<S: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    pub word_emb: ParamId,
    pub pos_emb: ParamId,
    pub ner_emb: ParamId,
    pub encoder: EncoderIds,
    pub layers: Vec<LayerIds>,
    /// Post-concatenation affine `[(k+1)d × d]`, `[d]`; absent under the
    /// no-graph and last-layer-only ablations.
    pub aggregate: Option<(ParamId, ParamId)>,
    /// Final affine `[3d × relation_count]`, `[relation_count]`.
    pub classifier: (ParamId, ParamId),
}

/// Per-tensor init seed: creation index folded into the model seed, so a
/// tensor's stream does not depend on how earlier tensors were sourced.
fn next_seed(base: u64, counter: &mut u64) -> u64 {
    *counter += 1;
    derive_seed(base, 0x7061_7261_6d73, *counter)
}

/// Uniform(-bound, bound) tensor with its own derived seed.
fn uniform<S: Scalar>(shape: Vec<usize>, bound: f64, seed: u64) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| S::from_f64(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, values).expect("shape/product consistency")
}

impl<S: Scalar> ModelParams<S> {
    /// Builds all tensors for `config` against `vocab`'s id spaces. A
    /// pretrained word table (already PAD-zeroed) replaces the random one;
    /// its shape must be `[word_count × word_dim]`.
    pub fn new(
        config: &ModelConfig,
        vocab: &Vocabulary,
        word_table: Option<Tensor<S>>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if config.relation_count != vocab.relation_count() {
            return Err(ModelError::Config(format!(
                "config expects {} relations, vocabulary has {}",
                config.relation_count,
                vocab.relation_count()
            )));
        }
        let d = config.hidden_dim;
        let input_dim = config.input_dim();
        let mut store = ParamStore::new();
        let mut counter = 0u64;
        let embedding = |count: usize, dim: usize, seed: u64| {
            let mut t = uniform::<S>(vec![count, dim], 1.0 / (dim as f64).sqrt(), seed);
            let row = t.values_mut();
            row[PAD_ID * dim..(PAD_ID + 1) * dim].fill(S::zero());
            t
        };

        let word_tensor = match word_table {
            Some(t) => {
                next_seed(config.seed, &mut counter); // keep later seeds aligned
                if t.shape() != [vocab.word_count(), config.word_dim] {
                    return Err(ModelError::Config(format!(
                        "word table shape {:?} does not match vocabulary {}x{}",
                        t.shape(),
                        vocab.word_count(),
                        config.word_dim
                    )));
                }
                t
            }
            None => embedding(vocab.word_count(), config.word_dim, next_seed(config.seed, &mut counter)),
        };
        let word_emb = store.add("embed.word", word_tensor);
        let pos_emb = store.add(
            "embed.pos",
            embedding(vocab.pos_count(), config.pos_dim, next_seed(config.seed, &mut counter)),
        );
        let ner_emb = store.add(
            "embed.ner",
            embedding(vocab.ner_count(), config.ner_dim, next_seed(config.seed, &mut counter)),
        );

        let affine = |store: &mut ParamStore<S>,
                      counter: &mut u64,
                      name: &str,
                      rows: usize,
                      cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            let w = store.add(
                format!("{name}.w"),
                uniform(vec![rows, cols], bound, next_seed(config.seed, counter)),
            );
            let b = store.add(
                format!("{name}.b"),
                Tensor::zeros(vec![cols]),
            );
            (w, b)
        };

        let encoder = if config.ablation.no_lstm {
            let (w, b) = affine(&mut store, &mut counter, "encoder.proj", input_dim, d);
            EncoderIds::Projection { w, b }
        } else {
            let h = config.lstm_dim();
            let cell = |store: &mut ParamStore<S>, counter: &mut u64, dir: &str| LstmCellIds {
                w_ih: store.add(
                    format!("encoder.{dir}.w_ih"),
                    uniform(
                        vec![input_dim, 4 * h],
                        1.0 / (input_dim as f64).sqrt(),
                        next_seed(config.seed, counter),
                    ),
                ),
                w_hh: store.add(
                    format!("encoder.{dir}.w_hh"),
                    uniform(
                        vec![h, 4 * h],
                        1.0 / (h as f64).sqrt(),
                        next_seed(config.seed, counter),
                    ),
                ),
                b: store.add(
                    format!("encoder.{dir}.b"),
                    Tensor::zeros(vec![4 * h]),
                ),
            };
            EncoderIds::Bilstm {
                fw: cell(&mut store, &mut counter, "fw"),
                bw: cell(&mut store, &mut counter, "bw"),
            }
        };

        let mut layers = Vec::new();
        if !config.ablation.no_sgcn {
            let head_dim = config.head_dim();
            let bound_d = 1.0 / (d as f64).sqrt();
            for l in 0..config.sgcn_layers {
                let mut heads = Vec::new();
                for i in 0..config.heads {
                    let att_k = store.add(
                        format!("sgcn.{l}.{i}.att_k"),
                        uniform(vec![d, d], bound_d, next_seed(config.seed, &mut counter)),
                    );
                    let att_q = store.add(
                        format!("sgcn.{l}.{i}.att_q"),
                        uniform(vec![d, d], bound_d, next_seed(config.seed, &mut counter)),
                    );
                    let gcn_w = store.add(
                        format!("sgcn.{l}.{i}.w"),
                        uniform(vec![d, head_dim], bound_d, next_seed(config.seed, &mut counter)),
                    );
                    let gcn_b = store.add(
                        format!("sgcn.{l}.{i}.b"),
                        Tensor::zeros(vec![head_dim]),
                    );
                    heads.push(HeadIds {
                        att_k,
                        att_q,
                        gcn_w,
                        gcn_b,
                    });
                }
                layers.push(LayerIds { heads });
            }
        }

        let aggregate = if config.ablation.no_sgcn || config.ablation.no_layer_agg {
            None
        } else {
            Some(affine(
                &mut store,
                &mut counter,
                "aggregate",
                (config.sgcn_layers + 1) * d,
                d,
            ))
        };

        let classifier = affine(
            &mut store,
            &mut counter,
            "classifier",
            3 * d,
            config.relation_count,
        );

        Ok(ModelParams {
            config: config.clone(),
            store,
            word_emb,
            pos_emb,
            ner_emb,
            encoder,
            layers,
            aggregate,
            classifier,
        })
    }
}
