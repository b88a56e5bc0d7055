//! `sgcn export-adjacency`: dump one learned n×n adjacency matrix as CSV
//! with token labels, the data behind attention heat maps.

use std::fs;

use sgcn::autodiff::{Tape, Tensor};
use sgcn::data::{load_dataset, make_batches, mask_entities};
use sgcn::model::forward_batch;
use sgcn::scalar::Scalar;
use sgcn::train::Checkpoint;

use crate::commands::{load_checkpoint_cli, LoadedCheckpoint};
use crate::{CliError, ExportArgs};

pub fn run(args: ExportArgs) -> Result<(), CliError> {
    match load_checkpoint_cli(&args.checkpoint, args.precision, args.narrow)? {
        LoadedCheckpoint::F32(ckpt) => export(&ckpt, &args),
        LoadedCheckpoint::F64(ckpt) => export(&ckpt, &args),
    }
}

fn export<S: Scalar>(ckpt: &Checkpoint<S>, args: &ExportArgs) -> Result<(), CliError> {
    let raw = load_dataset(&args.sentence_file)?;
    let example = &raw[0];
    let tokens = mask_entities(example)?;

    let encoded = ckpt.vocab.encode_all(std::slice::from_ref(example))?;
    let batches = make_batches(&encoded, 1, None)?;
    let mut tape = Tape::new();
    let output = forward_batch(&mut tape, &ckpt.params, &batches[0], None)?;
    let stack = &output.per_example[0].adjacency;

    if stack.layers.is_empty() {
        return Err(CliError::input(
            "checkpoint was trained without the graph component; it has no adjacency matrices",
        ));
    }
    let (k, h) = (stack.layers.len(), stack.layers[0].len());
    if args.layer >= k || args.head >= h {
        return Err(CliError::input(format!(
            "layer {} head {} out of range: checkpoint has {k} layer(s) with {h} head(s)",
            args.layer, args.head
        )));
    }
    let matrix = &stack.layers[args.layer][args.head];
    let csv = matrix_csv(&tokens, matrix);
    fs::write(&args.out, csv)?;
    println!(
        "{}\t{}x{} matrix (sentence {}, layer {}, head {})",
        args.out.display(),
        tokens.len(),
        tokens.len(),
        example.id,
        args.layer,
        args.head
    );
    Ok(())
}

/// Header row and column carry the masked tokens the model consumed. Cell
/// (u, v) is the edge weight from source token u into target token v.
fn matrix_csv<S: Scalar>(tokens: &[String], matrix: &Tensor<S>) -> String {
    let n = tokens.len();
    debug_assert_eq!(matrix.shape(), &[n, n]);
    let mut out = String::new();
    for tok in tokens {
        out.push(',');
        out.push_str(&csv_field(tok));
    }
    out.push('\n');
    for u in 0..n {
        out.push_str(&csv_field(&tokens[u]));
        for v in 0..n {
            out.push_str(&format!(",{:.6}", matrix.at(u, v).to_f64()));
        }
        out.push('\n');
    }
    out
}

fn csv_field(raw: &str) -> String {
    if raw.contains([',', '"', '\n']) {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}
