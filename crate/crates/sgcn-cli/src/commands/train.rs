//! `sgcn train`: full training run producing a checkpoint and an epoch log.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use sgcn::data::{
    build_vocab, load_dataset, load_pretrained_embeddings, pretrained_token_set, Vocabulary,
};
use sgcn::eval::pct1;
use sgcn::model::ModelConfig;
use sgcn::scalar::{Precision, Scalar};
use sgcn::train::{save_checkpoint, train, EpochRecord, TrainConfig};

use crate::config::{model_config, train_config, FileConfig};
use crate::{commands::resolve_data_dir, CliError, TrainArgs};

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let over = args.common.overrides();
    let data_dir = resolve_data_dir(args.data_dir.clone(), &file)?;

    let train_path = data_dir.join("train.json");
    let dev_path = data_dir.join("dev.json");
    for path in [&train_path, &dev_path] {
        if !path.exists() {
            return Err(CliError::input(format!(
                "missing dataset file {}",
                path.display()
            )));
        }
    }
    let train_raw = load_dataset(&train_path)?;
    let dev_raw = load_dataset(&dev_path)?;

    let pretrained = match &args.embeddings {
        Some(path) => pretrained_token_set(path)?,
        None => BTreeSet::new(),
    };
    let vocab = build_vocab(&train_raw, &pretrained)?;
    let train_set = vocab.encode_all(&train_raw)?;
    let dev_set = vocab.encode_all(&dev_raw)?;

    let cfg = model_config(&file, &over, vocab.relation_count())?;
    let tcfg = train_config(&file, &over)?;
    eprintln!(
        "training on {} sentences ({} dev), {} relations, model seed {}",
        train_set.len(),
        dev_set.len(),
        vocab.relation_count(),
        cfg.seed
    );

    match cfg.precision {
        Precision::F32 => run_typed::<f32>(
            &cfg,
            &tcfg,
            &vocab,
            &train_set,
            &dev_set,
            args.embeddings.as_deref(),
            &args.out_dir,
        ),
        Precision::F64 => run_typed::<f64>(
            &cfg,
            &tcfg,
            &vocab,
            &train_set,
            &dev_set,
            args.embeddings.as_deref(),
            &args.out_dir,
        ),
    }
}

fn run_typed<S: Scalar>(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    vocab: &Vocabulary,
    train_set: &[sgcn::data::ProcessedExample],
    dev_set: &[sgcn::data::ProcessedExample],
    embeddings: Option<&Path>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let word_table = match embeddings {
        Some(path) => Some(load_pretrained_embeddings::<S>(
            path,
            vocab,
            cfg.word_dim,
            cfg.seed,
        )?),
        None => None,
    };

    fs::create_dir_all(out_dir)?;
    let mut log_lines = vec![EpochRecord::TSV_HEADER.to_string()];
    println!("{}", EpochRecord::TSV_HEADER);
    let outcome = train::<S>(train_set, dev_set, cfg, tcfg, vocab, word_table, |rec| {
        let line = rec.tsv_line();
        println!("{line}");
        log_lines.push(line);
    })?;

    let ckpt_path = out_dir.join("model.ckpt");
    save_checkpoint(&outcome.best, &ckpt_path)?;
    let log_path = out_dir.join("train_log.tsv");
    fs::write(&log_path, log_lines.join("\n") + "\n")?;

    let best = &outcome.log[outcome.best.state.epoch - 1];
    eprintln!(
        "best epoch {} of {}{}; checkpoint {}, log {}",
        best.epoch,
        outcome.log.len(),
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        },
        ckpt_path.display(),
        log_path.display()
    );
    // Final dev scores, same line format `eval` prints.
    println!(
        "{}\t{}\t{}",
        pct1(best.dev_precision),
        pct1(best.dev_recall),
        pct1(best.dev_f1)
    );
    Ok(())
}
