//! The epoch loop: shuffle, batch, step, evaluate, early-stop.

use std::time::Instant;

use crate::autodiff::{Tape, Tensor, VarId};
use crate::data::{make_batches, Batch, ProcessedExample, Vocabulary, NO_RELATION};
use crate::eval::micro_prf;
use crate::model::{forward_batch, BatchOutput, Dropout, ModelConfig, ModelParams};
use crate::scalar::Scalar;
use crate::train::{sgd_step, Checkpoint, TrainConfig, TrainError, TrainState};
use crate::util::derive_seed;

// Purpose tags folded into the run seed so shuffling and dropout draw from
// unrelated streams.
const SEED_EPOCH: u64 = 0x65706f_6368;
const SEED_SHUFFLE: u64 = 0x7368_7566;
const SEED_DROPOUT: u64 = 0x64726f_70;

/// One line of the training log. `seconds` is wall-clock and is the only
/// field not determined by (dataset, configs, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub const TSV_HEADER: &'static str = "epoch\ttrain_loss\tdev_P\tdev_R\tdev_F1\tlr\tseconds";

    /// Tab-separated row matching [`Self::TSV_HEADER`].
    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.4}\t{:.4}\t{:.4}\t{:.6}\t{:.2}",
            self.epoch,
            self.train_loss,
            self.dev_precision,
            self.dev_recall,
            self.dev_f1,
            self.lr,
            self.seconds
        )
    }
}

pub struct TrainOutcome<S: Scalar> {
    pub best: Checkpoint<S>,
    pub log: Vec<EpochRecord>,
    /// True when patience ran out before `max_epochs`.
    pub stopped_early: bool,
}

/// Mean cross-entropy of a forward pass against the batch labels.
pub fn batch_loss<S: Scalar>(
    tape: &mut Tape<S>,
    outputs: &BatchOutput<S>,
    batch: &Batch,
) -> Result<VarId, TrainError> {
    debug_assert_eq!(outputs.per_example.len(), batch.size);
    let mut total: Option<VarId> = None;
    for (out, &label) in outputs.per_example.iter().zip(&batch.labels) {
        let ce = tape.cross_entropy_logits(out.logits, label)?;
        total = Some(match total {
            Some(t) => tape.add(t, ce)?,
            None => ce,
        });
    }
    let total = total.ok_or(TrainError::EmptySplit("batch"))?;
    Ok(tape.scale(total, 1.0 / batch.size as f64)?)
}

fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if v.to_f64() > row[best].to_f64() {
            best = i;
        }
    }
    best
}

/// Dropout-free forward pass over `examples`, returning one relation id per
/// example, in input order. Ties in the logits resolve to the lowest id.
pub fn predict_labels<S: Scalar>(
    params: &ModelParams<S>,
    examples: &[ProcessedExample],
    batch_size: usize,
) -> Result<Vec<usize>, TrainError> {
    let mut pred = Vec::with_capacity(examples.len());
    for batch in &make_batches(examples, batch_size, None)? {
        let mut tape = Tape::new();
        let outputs = forward_batch(&mut tape, params, batch, None)?;
        for out in &outputs.per_example {
            pred.push(argmax(tape.values(out.logits)));
        }
    }
    Ok(pred)
}

/// Trains until dev micro-F1 stops improving for `patience` epochs or
/// `max_epochs` is reached, whichever comes first. Returns the best snapshot
/// and the full per-epoch log. `on_epoch` fires after every epoch, in order.
pub fn train<S: Scalar>(
    train_set: &[ProcessedExample],
    dev_set: &[ProcessedExample],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    vocab: &Vocabulary,
    word_table: Option<Tensor<S>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<S>, TrainError> {
    train_cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if dev_set.is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }
    let no_relation = vocab
        .relation_id(NO_RELATION)
        .expect("relation vocabulary always carries the no-relation label");
    let gold: Vec<usize> = dev_set.iter().map(|ex| ex.label_id).collect();

    let mut params = ModelParams::<S>::new(model_cfg, vocab, word_table)?;
    let mut lr = train_cfg.lr;
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, f64, ModelParams<S>)> = None;
    let mut epochs_since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=train_cfg.max_epochs {
        let start = Instant::now();
        if epoch >= train_cfg.decay_start_epoch {
            lr *= train_cfg.lr_decay;
        }
        let epoch_seed = derive_seed(train_cfg.seed, SEED_EPOCH, epoch as u64);

        let batches = make_batches(
            train_set,
            train_cfg.batch_size,
            Some(derive_seed(epoch_seed, SEED_SHUFFLE, 0)),
        )?;
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let mut dropout = (model_cfg.dropout > 0.0).then(|| {
                Dropout::new(
                    model_cfg.dropout,
                    derive_seed(epoch_seed, SEED_DROPOUT, b as u64),
                )
            });
            let mut tape = Tape::new();
            let outputs = forward_batch(&mut tape, &params, batch, dropout.as_mut())?;
            let loss = batch_loss(&mut tape, &outputs, batch)?;
            loss_sum += tape.scalar_value(loss)?.to_f64() * batch.size as f64;
            let grads = tape.backward(loss)?;
            tape.apply_param_grads(&grads, &mut params.store);
            sgd_step(&mut params.store, lr, train_cfg.grad_clip_norm)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let pred = predict_labels(&params, dev_set, train_cfg.batch_size)?;
        let report = micro_prf(&gold, &pred, &no_relation)?;

        let improved = best.as_ref().is_none_or(|(f1, ..)| report.f1 > *f1);
        if improved {
            best = Some((report.f1, epoch, lr, params.clone()));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            dev_precision: report.precision,
            dev_recall: report.recall,
            dev_f1: report.f1,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);

        if epochs_since_best >= train_cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let (best_dev_f1, epoch, lr, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: Checkpoint {
            params: best_params,
            vocab: vocab.clone(),
            state: TrainState {
                epoch,
                best_dev_f1,
                lr,
            },
        },
        log,
        stopped_early,
    })
}
