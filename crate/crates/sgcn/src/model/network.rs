//! The assembled network: embedding lookup, context encoding, graph layers,
//! aggregation, pooling, and classification, with every ablation path.

use std::ops::Range;

use crate::autodiff::{Tape, Tensor, VarId};
use crate::data::Batch;
use crate::model::{
    bilstm_encode, sgcn_layer, Dropout, EncoderIds, ModelError, ModelParams,
};
use crate::scalar::Scalar;

/// One example's slices, borrowed out of a padded batch.
#[derive(Debug, Clone)]
pub struct ExampleView<'a> {
    pub token_ids: &'a [usize],
    pub pos_ids: &'a [usize],
    pub ner_ids: &'a [usize],
    /// True at real positions. Padding is always a suffix.
    pub mask: &'a [bool],
    pub length: usize,
    pub subj_span: Range<usize>,
    pub obj_span: Range<usize>,
}

impl<'a> ExampleView<'a> {
    pub fn from_batch(batch: &'a Batch, i: usize) -> Self {
        ExampleView {
            token_ids: batch.token_row(i),
            pos_ids: batch.pos_row(i),
            ner_ids: batch.ner_row(i),
            mask: batch.mask_row(i),
            length: batch.lengths[i],
            subj_span: batch.subj_spans[i].clone(),
            obj_span: batch.obj_spans[i].clone(),
        }
    }
}

/// Every head's adjacency for one example: `layers[l][i]` is the `[n × n]`
/// matrix of layer l, head i. Tensors share storage with the tape.
pub struct AdjacencyStack<S: Scalar> {
    pub layers: Vec<Vec<Tensor<S>>>,
}

pub struct ForwardOutput<S: Scalar> {
    /// `[1 × relation_count]` unnormalized scores.
    pub logits: VarId,
    pub adjacency: AdjacencyStack<S>,
}

pub struct BatchOutput<S: Scalar> {
    pub per_example: Vec<ForwardOutput<S>>,
}

/// Looks up and concatenates word, PoS, and NER embeddings per position,
/// then zeroes padded rows.
pub fn embed_tokens<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ModelParams<S>,
    view: &ExampleView,
) -> Result<VarId, ModelError> {
    let words = tape.param(&params.store, params.word_emb);
    let pos = tape.param(&params.store, params.pos_emb);
    let ner = tape.param(&params.store, params.ner_emb);
    let w = tape.gather_rows(words, view.token_ids)?;
    let p = tape.gather_rows(pos, view.pos_ids)?;
    let n = tape.gather_rows(ner, view.ner_ids)?;
    let cat = tape.concat_cols(&[w, p, n])?;
    Ok(tape.mask_rows(cat, view.mask)?)
}

/// Concatenates the encoder output with every graph layer's output and maps
/// the stack back to width d through one affine+relu. Padded rows are
/// re-zeroed (the bias would otherwise leak into them).
pub fn aggregate_layers<S: Scalar>(
    tape: &mut Tape<S>,
    w: VarId,
    b: VarId,
    h_encoder: VarId,
    layer_outputs: &[VarId],
    mask: &[bool],
) -> Result<VarId, ModelError> {
    let mut parts = vec![h_encoder];
    parts.extend_from_slice(layer_outputs);
    let cat = tape.concat_cols(&parts)?;
    let lin = tape.matmul(cat, w, false, false)?;
    let lin = tape.add_row_vec(lin, b)?;
    let act = tape.relu(lin)?;
    Ok(tape.mask_rows(act, mask)?)
}

/// Pools the final states into a sentence vector (max over real positions)
/// and two entity vectors (mean over each span), then scores relations with
/// one affine map.
pub fn classify<S: Scalar>(
    tape: &mut Tape<S>,
    w: VarId,
    b: VarId,
    hidden: VarId,
    subj_span: &Range<usize>,
    obj_span: &Range<usize>,
    mask: &[bool],
) -> Result<VarId, ModelError> {
    let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let check_span = |span: &Range<usize>| -> Result<Vec<usize>, ModelError> {
        let bad = || ModelError::BadSpan {
            start: span.start,
            end: span.end,
            valid: valid.len(),
            len: mask.len(),
        };
        if span.is_empty() || span.end > mask.len() {
            return Err(bad());
        }
        if span.clone().any(|i| !mask[i]) {
            return Err(bad());
        }
        Ok(span.clone().collect())
    };
    if valid.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let subj_rows = check_span(subj_span)?;
    let obj_rows = check_span(obj_span)?;
    let h_sent = tape.max_pool_rows(hidden, &valid)?;
    let h_subj = tape.mean_pool_rows(hidden, &subj_rows)?;
    let h_obj = tape.mean_pool_rows(hidden, &obj_rows)?;
    let cat = tape.concat_cols(&[h_sent, h_subj, h_obj])?;
    let lin = tape.matmul(cat, w, false, false)?;
    Ok(tape.add_row_vec(lin, b)?)
}

/// Full forward pass for one example. `dropout` carries training mode:
/// `None` disables it, making the pass deterministic.
pub fn forward_example<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ModelParams<S>,
    view: &ExampleView,
    mut dropout: Option<&mut Dropout>,
) -> Result<ForwardOutput<S>, ModelError> {
    let cfg = &params.config;
    let x = embed_tokens(tape, params, view)?;
    let mut h = match &params.encoder {
        EncoderIds::Bilstm { fw, bw } => {
            bilstm_encode(tape, &params.store, x, view.length, fw, bw)?
        }
        EncoderIds::Projection { w, b } => {
            let wv = tape.param(&params.store, *w);
            let bv = tape.param(&params.store, *b);
            let lin = tape.matmul(x, wv, false, false)?;
            let lin = tape.add_row_vec(lin, bv)?;
            tape.mask_rows(lin, view.mask)?
        }
    };
    if let Some(dp) = dropout.as_deref_mut() {
        h = dp.apply(tape, h)?;
        h = tape.mask_rows(h, view.mask)?;
    }

    let (cls_w, cls_b) = params.classifier;
    let cls_w = tape.param(&params.store, cls_w);
    let cls_b = tape.param(&params.store, cls_b);

    if cfg.ablation.no_sgcn {
        let logits = classify(
            tape,
            cls_w,
            cls_b,
            h,
            &view.subj_span,
            &view.obj_span,
            view.mask,
        )?;
        return Ok(ForwardOutput {
            logits,
            adjacency: AdjacencyStack { layers: Vec::new() },
        });
    }

    let mut z = h;
    let mut layer_outputs = Vec::with_capacity(params.layers.len());
    let mut adjacency = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, adjs) = sgcn_layer(
            tape,
            &params.store,
            z,
            layer,
            view.mask,
            cfg.adjacency_mode,
            dropout.as_deref_mut(),
        )?;
        z = next;
        layer_outputs.push(next);
        adjacency.push(adjs.iter().map(|&a| tape.to_tensor(a)).collect());
    }

    let hidden = match params.aggregate {
        Some((agg_w, agg_b)) => {
            let wv = tape.param(&params.store, agg_w);
            let bv = tape.param(&params.store, agg_b);
            aggregate_layers(tape, wv, bv, h, &layer_outputs, view.mask)?
        }
        // Last-layer-only ablation: the final graph output stands alone.
        None => z,
    };
    let logits = classify(
        tape,
        cls_w,
        cls_b,
        hidden,
        &view.subj_span,
        &view.obj_span,
        view.mask,
    )?;
    Ok(ForwardOutput {
        logits,
        adjacency: AdjacencyStack { layers: adjacency },
    })
}

/// Runs every example of a batch on one tape.
pub fn forward_batch<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ModelParams<S>,
    batch: &Batch,
    mut dropout: Option<&mut Dropout>,
) -> Result<BatchOutput<S>, ModelError> {
    let mut per_example = Vec::with_capacity(batch.size);
    for i in 0..batch.size {
        let view = ExampleView::from_batch(batch, i);
        per_example.push(forward_example(
            tape,
            params,
            &view,
            dropout.as_deref_mut(),
        )?);
    }
    Ok(BatchOutput { per_example })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use crate::data::{build_vocab, make_batches, raw::example, RawExample, Vocabulary};
    use crate::model::{AblationFlags, ModelConfig};
    use std::collections::BTreeSet;

    fn train_set() -> Vec<RawExample> {
        vec![
            example(
                "t1",
                &["the", "firm", "hired", "her", "lawyer", "quickly"],
                (1, 1, "ORG"),
                (4, 4, "PER"),
                "org:hired",
            ),
            example(
                "t2",
                &["he", "sued", "the", "firm"],
                (0, 0, "PER"),
                (3, 3, "ORG"),
                "per:sued",
            ),
        ]
    }

    fn setup(ablation: AblationFlags) -> (ModelParams<f64>, Vocabulary, Vec<RawExample>) {
        let train = train_set();
        let vocab = build_vocab(&train, &BTreeSet::new()).unwrap();
        let cfg = ModelConfig {
            word_dim: 6,
            pos_dim: 2,
            ner_dim: 2,
            hidden_dim: 8,
            sgcn_layers: 2,
            heads: 2,
            dropout: 0.5,
            ablation,
            relation_count: vocab.relation_count(),
            seed: 9,
            ..ModelConfig::default()
        };
        let params = ModelParams::new(&cfg, &vocab, None).unwrap();
        (params, vocab, train)
    }

    fn single_batch(vocab: &Vocabulary, examples: &[RawExample]) -> Batch {
        let processed = vocab.encode_all(examples).unwrap();
        make_batches(&processed, examples.len(), None)
            .unwrap()
            .remove(0)
    }

    #[test]
    fn forward_shapes_and_determinism_without_dropout() {
        let (params, vocab, train) = setup(AblationFlags::default());
        let batch = single_batch(&vocab, &train);
        let run = || {
            let mut tape = Tape::<f64>::new();
            let out = forward_batch(&mut tape, &params, &batch, None).unwrap();
            out.per_example
                .iter()
                .map(|o| tape.values(o.logits).to_vec())
                .collect::<Vec<_>>()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "eval-mode forward must be bitwise deterministic");
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|l| l.len() == vocab.relation_count()));
    }

    #[test]
    fn adjacency_stack_has_layer_by_head_shape() {
        let (params, vocab, train) = setup(AblationFlags::default());
        let batch = single_batch(&vocab, &train);
        let mut tape = Tape::<f64>::new();
        let out = forward_batch(&mut tape, &params, &batch, None).unwrap();
        let n = batch.width;
        for ex in &out.per_example {
            assert_eq!(ex.adjacency.layers.len(), 2);
            for heads in &ex.adjacency.layers {
                assert_eq!(heads.len(), 2);
                for adj in heads {
                    assert_eq!(adj.shape(), [n, n]);
                    assert!(adj.values().iter().all(|&x| x >= 0.0));
                }
            }
        }
    }

    #[test]
    fn padding_does_not_change_logits() {
        let (params, vocab, train) = setup(AblationFlags::default());
        // Batch both examples: the 4-token one is padded to 6.
        let padded = single_batch(&vocab, &train);
        let alone = single_batch(&vocab, &train[1..]);
        let mut tape = Tape::<f64>::new();
        let both = forward_batch(&mut tape, &params, &padded, None).unwrap();
        let solo = forward_batch(&mut tape, &params, &alone, None).unwrap();
        let from_padded = tape.values(both.per_example[1].logits);
        let from_alone = tape.values(solo.per_example[0].logits);
        for (a, b) in from_padded.iter().zip(from_alone) {
            assert!(
                (a - b).abs() < 1e-10,
                "padding leaked into logits: {a} vs {b}"
            );
        }
    }

    #[test]
    fn ablation_paths_run_and_differ() {
        let variants = [
            AblationFlags::default(),
            AblationFlags {
                no_sgcn: true,
                ..Default::default()
            },
            AblationFlags {
                no_lstm: true,
                ..Default::default()
            },
            AblationFlags {
                no_layer_agg: true,
                ..Default::default()
            },
        ];
        let mut first_logits: Vec<Vec<f64>> = Vec::new();
        for flags in variants {
            let (params, vocab, train) = setup(flags);
            let batch = single_batch(&vocab, &train);
            let mut tape = Tape::<f64>::new();
            let out = forward_batch(&mut tape, &params, &batch, None).unwrap();
            if flags.no_sgcn {
                assert!(out.per_example[0].adjacency.layers.is_empty());
            }
            first_logits.push(tape.values(out.per_example[0].logits).to_vec());
        }
        for i in 0..variants.len() {
            for j in i + 1..variants.len() {
                assert_ne!(
                    first_logits[i], first_logits[j],
                    "variants {i} and {j} coincide"
                );
            }
        }
    }

    #[test]
    fn bad_spans_are_rejected() {
        let (params, vocab, train) = setup(AblationFlags::default());
        let batch = single_batch(&vocab, &train);
        let mut view = ExampleView::from_batch(&batch, 1);
        view.subj_span = 0..0;
        let mut tape = Tape::<f64>::new();
        assert!(matches!(
            forward_example(&mut tape, &params, &view, None),
            Err(ModelError::BadSpan { .. })
        ));
        let mut view = ExampleView::from_batch(&batch, 1);
        view.obj_span = 4..6; // inside the padded tail of the 4-token example
        assert!(matches!(
            forward_example(&mut tape, &params, &view, None),
            Err(ModelError::BadSpan { .. })
        ));
    }

    #[test]
    fn training_mode_dropout_changes_outputs_but_is_seeded() {
        let (params, vocab, train) = setup(AblationFlags::default());
        let batch = single_batch(&vocab, &train);
        let run = |seed: u64| {
            let mut tape = Tape::<f64>::new();
            let mut dp = Dropout::new(0.5, seed);
            let out = forward_batch(&mut tape, &params, &batch, Some(&mut dp)).unwrap();
            tape.values(out.per_example[0].logits).to_vec()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    /// Mean cross-entropy over every example in the batch, as one tape node.
    fn batch_loss(
        tape: &mut Tape<f64>,
        out: &BatchOutput<f64>,
        labels: &[usize],
    ) -> VarId {
        let mut total = None;
        for (o, &label) in out.per_example.iter().zip(labels) {
            let l = tape.cross_entropy_logits(o.logits, label).unwrap();
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l).unwrap(),
            });
        }
        let total = total.unwrap();
        tape.scale(total, 1.0 / labels.len() as f64).unwrap()
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let (mut params, vocab, train) = setup(AblationFlags::default());
        let batch = single_batch(&vocab, &train);

        {
            let mut tape = Tape::<f64>::new();
            let out = forward_batch(&mut tape, &params, &batch, None).unwrap();
            let loss = batch_loss(&mut tape, &out, &batch.labels);
            let grads = tape.backward(loss).unwrap();
            tape.apply_param_grads(&grads, &mut params.store);
        }

        // The probe rebuilds a params view around the perturbed store each
        // call; tensors share storage, so the clone is cheap.
        let cfg = params.config.clone();
        let (we, pe, ne) = (params.word_emb, params.pos_emb, params.ner_emb);
        let encoder = params.encoder;
        let layers = params.layers.clone();
        let aggregate = params.aggregate;
        let classifier = params.classifier;
        let batch_ref = &batch;
        let eval = move |store: &crate::autodiff::ParamStore<f64>| {
            let probe = ModelParams {
                config: cfg.clone(),
                store: store.clone(),
                word_emb: we,
                pos_emb: pe,
                ner_emb: ne,
                encoder,
                layers: layers.clone(),
                aggregate,
                classifier,
            };
            let mut tape = Tape::<f64>::new();
            let out = forward_batch(&mut tape, &probe, batch_ref, None).expect("forward");
            let loss = batch_loss(&mut tape, &out, &batch_ref.labels);
            tape.scalar_value(loss)
        };
        let report = finite_difference_check(&mut params.store, 1e-5, 6, 17, eval).unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "worst {} at {}: {:e}",
            report.worst_param,
            report.worst_coord,
            report.max_rel_error
        );
    }
}
