//! Flat key=value configuration files plus flag overrides.
//!
//! One file configures everything; keys mirror the field names of the model,
//! trainer, and generator configs. `#` starts a comment, blank lines are
//! skipped, and unknown keys are rejected so typos fail loudly. The single
//! `seed` key feeds both parameter initialization and the training loop.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sgcn::data::GeneratorConfig;
use sgcn::model::{AblationFlags, AdjacencyMode, ModelConfig};
use sgcn::scalar::Precision;
use sgcn::train::TrainConfig;

use crate::CliError;

const MODEL_KEYS: &[&str] = &[
    "word_dim",
    "pos_dim",
    "ner_dim",
    "hidden_dim",
    "sgcn_layers",
    "heads",
    "dropout",
    "adjacency_mode",
    "ablation",
    "precision",
    "seed",
];
const TRAIN_KEYS: &[&str] = &[
    "lr",
    "batch_size",
    "patience",
    "max_epochs",
    "lr_decay",
    "decay_start_epoch",
    "grad_clip_norm",
];
const GENERATOR_KEYS: &[&str] = &[
    "num_examples",
    "vocab_size",
    "min_len",
    "max_len",
    "num_relations",
    "trigger_distance",
    "n_train",
    "n_dev",
    "n_test",
];
const PATH_KEYS: &[&str] = &["data_dir"];

/// Parsed key=value file. An absent path yields an empty table, so every
/// command works flag-only.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::input(format!(
                    "{origin}:{}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if !MODEL_KEYS.contains(&key.as_str())
                && !TRAIN_KEYS.contains(&key.as_str())
                && !GENERATOR_KEYS.contains(&key.as_str())
                && !PATH_KEYS.contains(&key.as_str())
            {
                return Err(CliError::input(format!(
                    "{origin}:{}: unknown key `{key}`",
                    lineno + 1
                )));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::input(format!(
                    "{origin}:{}: key `{key}` set twice",
                    lineno + 1
                )));
            }
        }
        Ok(FileConfig { values })
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::input(format!("config key `{key}`: cannot parse `{raw}`: {e}"))
            }),
        }
    }

    fn get_or<T>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }
}

/// Flag values that override the file. `None` means the flag was not given.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
    pub adjacency_norm: Option<AdjacencyMode>,
    pub ablation: Option<AblationFlags>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
}

/// Model architecture from file + flags. `relation_count` always comes from
/// the data, never from configuration.
pub fn model_config(
    file: &FileConfig,
    over: &Overrides,
    relation_count: usize,
) -> Result<ModelConfig, CliError> {
    let d = ModelConfig::default();
    let adjacency_mode = match over.adjacency_norm {
        Some(mode) => mode,
        None => match file.get_raw("adjacency_mode") {
            None => d.adjacency_mode,
            Some(raw) => AdjacencyMode::parse(raw).ok_or_else(|| {
                CliError::input(format!(
                    "config key `adjacency_mode`: expected relu-mean or softmax, got `{raw}`"
                ))
            })?,
        },
    };
    let ablation = match over.ablation {
        Some(flags) => flags,
        None => match file.get_raw("ablation") {
            None => d.ablation,
            Some(raw) => AblationFlags::parse(raw).ok_or_else(|| {
                CliError::input(format!(
                    "config key `ablation`: expected none, no_sgcn, no_lstm or no_layer_agg, got `{raw}`"
                ))
            })?,
        },
    };
    let precision = match over.precision {
        Some(p) => p,
        None => match file.get_raw("precision") {
            None => d.precision,
            Some(raw) => parse_precision(raw).map_err(|e| {
                CliError::input(format!("config key `precision`: {e}"))
            })?,
        },
    };
    let cfg = ModelConfig {
        word_dim: file.get_or("word_dim", d.word_dim)?,
        pos_dim: file.get_or("pos_dim", d.pos_dim)?,
        ner_dim: file.get_or("ner_dim", d.ner_dim)?,
        hidden_dim: file.get_or("hidden_dim", d.hidden_dim)?,
        sgcn_layers: match over.layers {
            Some(k) => k,
            None => file.get_or("sgcn_layers", d.sgcn_layers)?,
        },
        heads: match over.heads {
            Some(h) => h,
            None => file.get_or("heads", d.heads)?,
        },
        dropout: file.get_or("dropout", d.dropout)?,
        adjacency_mode,
        ablation,
        relation_count,
        precision,
        seed: match over.seed {
            Some(s) => s,
            None => file.get_or("seed", d.seed)?,
        },
    };
    cfg.validate()
        .map_err(|e| CliError::input(format!("model configuration: {e}")))?;
    Ok(cfg)
}

pub fn train_config(file: &FileConfig, over: &Overrides) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        lr: file.get_or("lr", d.lr)?,
        batch_size: file.get_or("batch_size", d.batch_size)?,
        patience: file.get_or("patience", d.patience)?,
        max_epochs: file.get_or("max_epochs", d.max_epochs)?,
        lr_decay: file.get_or("lr_decay", d.lr_decay)?,
        decay_start_epoch: file.get_or("decay_start_epoch", d.decay_start_epoch)?,
        grad_clip_norm: file.get_or("grad_clip_norm", d.grad_clip_norm)?,
        seed: match over.seed {
            Some(s) => s,
            None => file.get_or("seed", d.seed)?,
        },
    };
    cfg.validate()
        .map_err(|e| CliError::input(e.to_string()))?;
    Ok(cfg)
}

/// Synthetic-task settings plus split sizes. Defaults produce the documented
/// desk-scale benchmark: 2800 sentences split 2000/400/400.
pub fn generator_config(
    file: &FileConfig,
) -> Result<(GeneratorConfig, usize, usize, usize), CliError> {
    let gen = GeneratorConfig {
        num_examples: file.get_or("num_examples", 2800)?,
        vocab_size: file.get_or("vocab_size", 50)?,
        min_len: file.get_or("min_len", 12)?,
        max_len: file.get_or("max_len", 20)?,
        num_relations: file.get_or("num_relations", 4)?,
        trigger_distance: file.get_or("trigger_distance", 5)?,
    };
    let n_train = file.get_or("n_train", 2000)?;
    let n_dev = file.get_or("n_dev", 400)?;
    let n_test = file.get_or("n_test", 400)?;
    Ok((gen, n_train, n_dev, n_test))
}

pub fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "32" => Ok(Precision::F32),
        "64" => Ok(Precision::F64),
        other => Err(format!("precision must be 32 or 64, got `{other}`")),
    }
}

pub fn parse_adjacency(s: &str) -> Result<AdjacencyMode, String> {
    AdjacencyMode::parse(s)
        .ok_or_else(|| format!("adjacency norm must be relu-mean or softmax, got `{s}`"))
}

pub fn parse_ablation(s: &str) -> Result<AblationFlags, String> {
    AblationFlags::parse(s).ok_or_else(|| {
        format!("ablation must be none, no_sgcn, no_lstm or no_layer_agg, got `{s}`")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_blanks() {
        let text = "\n# comment\nhidden_dim = 40  # trailing\nlr=0.1\nnum_examples = 12\n";
        let file = FileConfig::parse(text, "test.conf").unwrap();
        assert_eq!(file.get_raw("hidden_dim"), Some("40"));
        assert_eq!(file.get_raw("lr"), Some("0.1"));
        let over = Overrides::default();
        let tcfg = train_config(&file, &over).unwrap();
        assert_eq!(tcfg.lr, 0.1);
        assert_eq!(tcfg.batch_size, 50);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        assert!(FileConfig::parse("hiden_dim = 40\n", "t").is_err());
        assert!(FileConfig::parse("lr = 0.1\nlr = 0.2\n", "t").is_err());
        assert!(FileConfig::parse("just some words\n", "t").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let file = FileConfig::parse("seed = 9\nheads = 5\nhidden_dim = 40\n", "t").unwrap();
        let over = Overrides {
            seed: Some(2),
            heads: Some(4),
            ..Default::default()
        };
        let cfg = model_config(&file, &over, 3).unwrap();
        assert_eq!(cfg.seed, 2);
        assert_eq!(cfg.heads, 4);
        assert_eq!(cfg.hidden_dim, 40);
        let tcfg = train_config(&file, &over).unwrap();
        assert_eq!(tcfg.seed, 2);
    }

    #[test]
    fn bad_values_name_the_key() {
        let file = FileConfig::parse("dropout = high\n", "t").unwrap();
        let err = model_config(&file, &Overrides::default(), 3).unwrap_err();
        assert!(err.to_string().contains("dropout"), "{err}");
    }

    #[test]
    fn generator_defaults_match_the_benchmark() {
        let (gen, n_train, n_dev, n_test) =
            generator_config(&FileConfig::default()).unwrap();
        assert_eq!(gen.num_examples, 2800);
        assert_eq!(gen.vocab_size, 50);
        assert_eq!((gen.min_len, gen.max_len), (12, 20));
        assert_eq!(gen.num_relations, 4);
        assert_eq!(gen.trigger_distance, 5);
        assert_eq!((n_train, n_dev, n_test), (2000, 400, 400));
    }

    #[test]
    fn invalid_configs_carry_input_exit_code() {
        let file = FileConfig::parse("hidden_dim = 41\nheads = 2\n", "t").unwrap();
        let err = model_config(&file, &Overrides::default(), 3).unwrap_err();
        assert_eq!(err.code, 2);
    }
}
