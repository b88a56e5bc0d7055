//! `sgcn gradcheck`: central finite differences against the analytic
//! gradients on a small randomized model. Always runs in 64 bits; float32
//! differences are too noisy to certify anything.

use sgcn::autodiff::{finite_difference_check, ParamStore, Tape};
use sgcn::data::{build_vocab, generate_synthetic, make_batches, GeneratorConfig};
use sgcn::model::{forward_batch, ModelConfig, ModelParams};
use sgcn::scalar::Precision;
use sgcn::train::batch_loss;

use crate::config::FileConfig;
use crate::{CliError, GradcheckArgs};

/// Small enough to finish in seconds, big enough that every parameter group
/// (embeddings, encoder, every layer and head, aggregation, classifier)
/// participates in the loss.
const TOKENS: usize = 5;
const EXAMPLES: usize = 6;
const COORDS_PER_TENSOR: usize = 6;
const EPSILON: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

pub fn run(args: GradcheckArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let seed = match args.seed {
        Some(s) => s,
        None => match file.get_raw("seed") {
            None => 1,
            Some(raw) => raw
                .parse()
                .map_err(|e| CliError::input(format!("config key `seed`: {e}")))?,
        },
    };

    let gen = GeneratorConfig {
        num_examples: EXAMPLES,
        vocab_size: 10,
        min_len: TOKENS,
        max_len: TOKENS,
        num_relations: 2,
        trigger_distance: 1,
    };
    let raw = generate_synthetic(&gen, seed)?;
    let vocab = build_vocab(&raw, &Default::default())?;
    let encoded = vocab.encode_all(&raw)?;
    let batches = make_batches(&encoded, EXAMPLES, None)?;
    let batch = &batches[0];

    let config = ModelConfig {
        word_dim: 6,
        pos_dim: 3,
        ner_dim: 3,
        hidden_dim: 12,
        sgcn_layers: 2,
        heads: 3,
        dropout: 0.0,
        relation_count: vocab.relation_count(),
        precision: Precision::F64,
        seed,
        ..ModelConfig::default()
    };
    let mut params = ModelParams::<f64>::new(&config, &vocab, None)?;

    {
        let mut tape = Tape::<f64>::new();
        let outputs = forward_batch(&mut tape, &params, batch, None)?;
        let loss = batch_loss(&mut tape, &outputs, batch)?;
        let grads = tape.backward(loss).map_err(|e| CliError::check(e.to_string()))?;
        tape.apply_param_grads(&grads, &mut params.store);
    }

    if args.corrupt_backward {
        // Negative control: shift one tensor's analytic gradients so the
        // check has to report that group.
        let id = params
            .store
            .find("classifier.w")
            .expect("classifier weight always exists");
        for g in params.store.get_mut(id).grad_mut() {
            *g += 0.05;
        }
    }

    let template = params.clone();
    let batch_ref = batch;
    let eval = move |store: &ParamStore<f64>| {
        let mut probe = template.clone();
        probe.store = store.clone();
        let mut tape = Tape::<f64>::new();
        let outputs = forward_batch(&mut tape, &probe, batch_ref, None).expect("probe forward");
        let loss = batch_loss(&mut tape, &outputs, batch_ref).expect("probe loss");
        tape.scalar_value(loss)
    };
    let report = finite_difference_check(&mut params.store, EPSILON, COORDS_PER_TENSOR, seed, eval)
        .map_err(|e| CliError::check(e.to_string()))?;

    println!(
        "max relative error {:e} ({} coordinates, worst parameter {} at index {})",
        report.max_rel_error, report.coords_checked, report.worst_param, report.worst_coord
    );
    if report.max_rel_error < TOLERANCE {
        Ok(())
    } else {
        Err(CliError::check(format!(
            "gradient check failed: parameter group {} off by {:e} (tolerance {TOLERANCE:e})",
            report.worst_param, report.max_rel_error
        )))
    }
}
