//! Binary checkpoint container: model configuration, vocabulary, training
//! state, and every parameter tensor, behind a checksum.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SGCNCKPT"
//! version  u32
//! width    u8       bytes per stored value (4 or 8)
//! config   u64 length + JSON
//! vocab    u64 length + JSON (id-ordered token lists)
//! state    u64 length + JSON
//! count    u64      number of tensors
//! tensor*  u64 name length + UTF-8 name, u64 rank, u64 dims..., raw values
//! checksum u64      FNV-64 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::model::{ModelConfig, ModelParams};
use crate::scalar::Scalar;
use crate::train::TrainError;
use crate::util::fnv64;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SGCNCKPT";

/// Where a training run stood when the snapshot was taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// 1-based epoch that produced these parameters.
    pub epoch: usize,
    pub best_dev_f1: f64,
    pub lr: f64,
}

/// A self-contained model snapshot; everything needed to predict or resume.
#[derive(Debug, Clone)]
pub struct Checkpoint<S: Scalar> {
    pub params: ModelParams<S>,
    pub vocab: Vocabulary,
    pub state: TrainState,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }
}

fn push_len_prefixed(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(bytes);
}

fn push_values<S: Scalar>(buf: &mut Vec<u8>, values: &[S]) {
    match S::BYTES {
        4 => {
            for &v in values {
                buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
        8 => {
            for &v in values {
                buf.extend_from_slice(&v.to_f64().to_le_bytes());
            }
        }
        other => unreachable!("unsupported scalar width {other}"),
    }
}

pub fn save_checkpoint<S: Scalar>(ckpt: &Checkpoint<S>, path: &Path) -> Result<(), TrainError> {
    let config_json = serde_json::to_vec(&ckpt.params.config)
        .map_err(|e| TrainError::BadCheckpoint(format!("config serialization: {e}")))?;
    let vocab_json = serde_json::to_vec(&ckpt.vocab)
        .map_err(|e| TrainError::BadCheckpoint(format!("vocabulary serialization: {e}")))?;
    let state_json = serde_json::to_vec(&ckpt.state)
        .map_err(|e| TrainError::BadCheckpoint(format!("state serialization: {e}")))?;

    let store = &ckpt.params.store;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(S::BYTES as u8);
    push_len_prefixed(&mut buf, &config_json);
    push_len_prefixed(&mut buf, &vocab_json);
    push_len_prefixed(&mut buf, &state_json);
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, tensor) in store.iter() {
        push_len_prefixed(&mut buf, name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u64).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        push_values(&mut buf, tensor.values());
    }
    let checksum = fnv64(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    fs::write(path, &buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(TrainError::Truncated(format!(
                "{what}: needed {n} bytes at offset {}, file holds {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len_prefixed(&mut self, what: &str) -> Result<&'a [u8], TrainError> {
        let len = self.u64(what)?;
        let len = usize::try_from(len)
            .map_err(|_| TrainError::BadCheckpoint(format!("{what}: absurd length {len}")))?;
        self.take(len, what)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read_values<S: Scalar>(
    reader: &mut Reader<'_>,
    width: usize,
    numel: usize,
    allow_narrowing: bool,
    name: &str,
) -> Result<Vec<S>, TrainError> {
    if width == 8 && S::BYTES == 4 && !allow_narrowing {
        return Err(TrainError::NarrowingRequired);
    }
    let raw = reader.take(
        numel
            .checked_mul(width)
            .ok_or_else(|| TrainError::BadCheckpoint(format!("tensor `{name}`: size overflow")))?,
        name,
    )?;
    let values = match width {
        // Widening 32 -> 64 is exact, so it needs no flag.
        4 => raw
            .chunks_exact(4)
            .map(|c| S::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        8 => raw
            .chunks_exact(8)
            .map(|c| S::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        other => {
            return Err(TrainError::BadCheckpoint(format!(
                "unsupported value width {other}"
            )))
        }
    };
    Ok(values)
}

/// Reads a checkpoint back. `allow_narrowing` must be set to load 64-bit
/// values into a 32-bit store; the lossless 32 -> 64 direction is implicit.
pub fn load_checkpoint<S: Scalar>(
    path: &Path,
    allow_narrowing: bool,
) -> Result<Checkpoint<S>, TrainError> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 + 1 + 8 {
        return Err(TrainError::Truncated(format!(
            "file holds {} bytes, smaller than any checkpoint",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(TrainError::BadCheckpoint(
            "magic bytes missing; not a checkpoint file".to_string(),
        ));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let body_len = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = fnv64(&bytes[..body_len]);
    if stored != computed {
        return Err(TrainError::Checksum { stored, computed });
    }

    let mut reader = Reader {
        bytes: &bytes[..body_len],
        pos: 12,
    };
    let width = reader.take(1, "value width")?[0] as usize;
    let mut config: ModelConfig = serde_json::from_slice(reader.len_prefixed("model config")?)
        .map_err(|e| TrainError::BadCheckpoint(format!("model config: {e}")))?;
    let mut vocab: Vocabulary = serde_json::from_slice(reader.len_prefixed("vocabulary")?)
        .map_err(|e| TrainError::BadCheckpoint(format!("vocabulary: {e}")))?;
    vocab.rebuild_indexes();
    let state: TrainState = serde_json::from_slice(reader.len_prefixed("training state")?)
        .map_err(|e| TrainError::BadCheckpoint(format!("training state: {e}")))?;

    // The store the handles point into is rebuilt from the config, then every
    // tensor is overwritten from the file; the loaded model carries the
    // precision it was read at.
    config.precision = S::PRECISION;
    let mut params = ModelParams::<S>::new(&config, &vocab, None)?;
    let count = reader.u64("tensor count")?;
    if count != params.store.len() as u64 {
        return Err(TrainError::BadCheckpoint(format!(
            "checkpoint holds {count} tensors, this configuration has {}",
            params.store.len()
        )));
    }
    let mut filled = vec![false; params.store.len()];
    for _ in 0..count {
        let name = std::str::from_utf8(reader.len_prefixed("tensor name")?)
            .map_err(|e| TrainError::BadCheckpoint(format!("tensor name: {e}")))?
            .to_string();
        let rank = reader.u64("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(reader.u64("tensor dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let values = read_values::<S>(&mut reader, width, numel, allow_narrowing, &name)?;
        let id = params.store.find(&name).ok_or_else(|| {
            TrainError::BadCheckpoint(format!("unknown tensor `{name}` in checkpoint"))
        })?;
        if std::mem::replace(&mut filled[id.0], true) {
            return Err(TrainError::BadCheckpoint(format!(
                "tensor `{name}` appears twice"
            )));
        }
        let tensor = params.store.get_mut(id);
        if tensor.shape() != shape {
            return Err(TrainError::BadCheckpoint(format!(
                "tensor `{name}` has shape {shape:?}, expected {:?}",
                tensor.shape()
            )));
        }
        tensor.values_mut().copy_from_slice(&values);
    }
    if !reader.done() {
        return Err(TrainError::BadCheckpoint(format!(
            "{} trailing bytes after the last tensor",
            reader.bytes.len() - reader.pos
        )));
    }
    Ok(Checkpoint {
        params,
        vocab,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    use crate::data::{Vocabulary, NO_RELATION, PAD_TOKEN, UNK_TOKEN};
    use crate::model::{AblationFlags, AdjacencyMode, ModelConfig};
    use crate::scalar::Precision;

    fn tiny_vocab() -> Vocabulary {
        let specials = |rest: &[&str]| {
            let mut v = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
            v.extend(rest.iter().map(|s| s.to_string()));
            v
        };
        Vocabulary::from_lists(
            specials(&["alpha", "beta", "gamma"]),
            specials(&["NOUN", "VERB"]),
            specials(&["PER"]),
            vec![NO_RELATION.to_string(), "rel00".to_string()],
            &BTreeSet::new(),
        )
        .unwrap()
    }

    fn tiny_config(precision: Precision) -> ModelConfig {
        ModelConfig {
            word_dim: 4,
            pos_dim: 2,
            ner_dim: 2,
            hidden_dim: 4,
            sgcn_layers: 1,
            heads: 2,
            dropout: 0.5,
            adjacency_mode: AdjacencyMode::ReluMean,
            ablation: AblationFlags::default(),
            relation_count: 2,
            precision,
            seed: 7,
        }
    }

    fn tiny_checkpoint<S: Scalar>(precision: Precision) -> Checkpoint<S> {
        let vocab = tiny_vocab();
        let params = ModelParams::<S>::new(&tiny_config(precision), &vocab, None).unwrap();
        Checkpoint {
            params,
            vocab,
            state: TrainState {
                epoch: 3,
                best_dev_f1: 0.75,
                lr: 0.27,
            },
        }
    }

    fn assert_stores_equal<S: Scalar>(a: &ModelParams<S>, b: &ModelParams<S>) {
        assert_eq!(a.store.len(), b.store.len());
        for ((name_a, t_a), (name_b, t_b)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(name_a, name_b);
            assert_eq!(t_a.shape(), t_b.shape(), "{name_a}");
            for (x, y) in t_a.values().iter().zip(t_b.values()) {
                assert_eq!(
                    x.to_f64().to_bits(),
                    y.to_f64().to_bits(),
                    "{name_a} differs"
                );
            }
        }
    }

    #[test]
    fn round_trip_is_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = tiny_checkpoint::<f32>(Precision::F32);
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint::<f32>(&path, false).unwrap();
        assert_stores_equal(&ckpt.params, &loaded.params);
        assert_eq!(ckpt.params.config, loaded.params.config);
        assert_eq!(ckpt.vocab, loaded.vocab);
        assert_eq!(ckpt.state, loaded.state);
    }

    #[test]
    fn truncation_is_an_error_not_a_crash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&tiny_checkpoint::<f32>(Precision::F32), &path).unwrap();
        let full = fs::read(&path).unwrap();
        for keep in [0, 7, 12, 40, full.len() / 2, full.len() - 1] {
            let cut = dir.path().join(format!("cut-{keep}.ckpt"));
            fs::write(&cut, &full[..keep]).unwrap();
            let err = load_checkpoint::<f32>(&cut, false).unwrap_err();
            assert!(
                matches!(err, TrainError::Truncated(_) | TrainError::Checksum { .. }),
                "keep={keep}: unexpected error {err:?}"
            );
        }
    }

    #[test]
    fn corruption_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&tiny_checkpoint::<f32>(Precision::F32), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path, false),
            Err(TrainError::Checksum { .. })
        ));
    }

    #[test]
    fn version_and_magic_mismatches_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&tiny_checkpoint::<f32>(Precision::F32), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut wrong_version = good.clone();
        wrong_version[8..12].copy_from_slice(&99u32.to_le_bytes());
        fs::write(&path, &wrong_version).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path, false),
            Err(TrainError::Version {
                found: 99,
                expected: CHECKPOINT_VERSION
            })
        ));

        let mut wrong_magic = good;
        wrong_magic[0] = b'X';
        fs::write(&path, &wrong_magic).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path, false),
            Err(TrainError::BadCheckpoint(_))
        ));
    }

    #[test]
    fn narrowing_needs_the_explicit_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model64.ckpt");
        let ckpt = tiny_checkpoint::<f64>(Precision::F64);
        save_checkpoint(&ckpt, &path).unwrap();

        assert!(matches!(
            load_checkpoint::<f32>(&path, false),
            Err(TrainError::NarrowingRequired)
        ));

        let narrowed = load_checkpoint::<f32>(&path, true).unwrap();
        assert_eq!(narrowed.params.config.precision, Precision::F32);
        for ((name, wide), (_, narrow)) in
            ckpt.params.store.iter().zip(narrowed.params.store.iter())
        {
            for (x, y) in wide.values().iter().zip(narrow.values()) {
                assert_eq!((*x as f32).to_bits(), y.to_bits(), "{name}");
            }
        }
    }

    #[test]
    fn widening_is_implicit_and_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model32.ckpt");
        let ckpt = tiny_checkpoint::<f32>(Precision::F32);
        save_checkpoint(&ckpt, &path).unwrap();
        let widened = load_checkpoint::<f64>(&path, false).unwrap();
        for ((name, narrow), (_, wide)) in
            ckpt.params.store.iter().zip(widened.params.store.iter())
        {
            for (x, y) in narrow.values().iter().zip(wide.values()) {
                assert_eq!(*x as f64, *y, "{name}");
            }
        }
    }
}
