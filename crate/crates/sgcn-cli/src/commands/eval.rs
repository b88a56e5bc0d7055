//! `sgcn eval` and `sgcn predict`: score or label a dataset with a checkpoint.

use std::path::Path;

use sgcn::data::{load_dataset, ProcessedExample, Vocabulary, NO_RELATION};
use sgcn::eval::micro_prf;
use sgcn::scalar::Scalar;
use sgcn::train::{predict_labels, Checkpoint};

use crate::commands::{load_checkpoint_cli, LoadedCheckpoint};
use crate::{CliError, EvalArgs, PredictArgs};

const EVAL_BATCH: usize = 50;

fn encode_file(
    vocab: &Vocabulary,
    path: &Path,
) -> Result<Vec<ProcessedExample>, CliError> {
    let raw = load_dataset(path)?;
    Ok(vocab.encode_all(&raw)?)
}

fn scores<S: Scalar>(ckpt: &Checkpoint<S>, data: &Path) -> Result<String, CliError> {
    let examples = encode_file(&ckpt.vocab, data)?;
    let gold: Vec<usize> = examples.iter().map(|ex| ex.label_id).collect();
    let pred = predict_labels(&ckpt.params, &examples, EVAL_BATCH)?;
    let no_relation = ckpt
        .vocab
        .relation_id(NO_RELATION)
        .expect("checkpoint vocabulary carries the no-relation label");
    let report = micro_prf(&gold, &pred, &no_relation)?;
    Ok(report.tsv_summary())
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let line = match load_checkpoint_cli(&args.checkpoint, args.precision, args.narrow)? {
        LoadedCheckpoint::F32(ckpt) => scores(&ckpt, &args.data)?,
        LoadedCheckpoint::F64(ckpt) => scores(&ckpt, &args.data)?,
    };
    println!("{line}");
    Ok(())
}

fn labels<S: Scalar>(ckpt: &Checkpoint<S>, data: &Path) -> Result<Vec<String>, CliError> {
    let examples = encode_file(&ckpt.vocab, data)?;
    let pred = predict_labels(&ckpt.params, &examples, EVAL_BATCH)?;
    Ok(pred
        .into_iter()
        .map(|id| ckpt.vocab.relation_name(id).to_string())
        .collect())
}

pub fn run_predict(args: PredictArgs) -> Result<(), CliError> {
    let names = match load_checkpoint_cli(&args.checkpoint, args.precision, args.narrow)? {
        LoadedCheckpoint::F32(ckpt) => labels(&ckpt, &args.data)?,
        LoadedCheckpoint::F64(ckpt) => labels(&ckpt, &args.data)?,
    };
    for name in names {
        println!("{name}");
    }
    Ok(())
}
