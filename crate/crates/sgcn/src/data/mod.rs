//! Dataset ingestion, entity masking, vocabulary and embedding loading,
//! batching, and the synthetic relation task used for desk-scale checks.

mod batch;
mod embeddings;
mod mask;
pub(crate) mod raw;
mod synthetic;
mod vocab;

pub use batch::{make_batches, Batch};
pub use embeddings::{load_pretrained_embeddings, pretrained_token_set};
pub use mask::mask_entities;
pub use raw::{load_dataset, parse_dataset_str, RawExample, RecordIssue};
pub use synthetic::{generate_synthetic, rule_based_label, split_synthetic, GeneratorConfig};
pub use vocab::{
    build_vocab, ProcessedExample, Vocabulary, NO_RELATION, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a valid dataset file: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {count} malformed record(s); first: {first}", count = issues.len(), first = issues[0])]
    MalformedRecords {
        path: String,
        issues: Vec<RecordIssue>,
    },
    #[error("record {id}: {reason}")]
    BadRecord { id: String, reason: String },
    #[error("{path} line {line}: expected {expected} embedding values, found {found}")]
    EmbeddingWidth {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path} line {line}: {reason}")]
    EmbeddingParse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("unknown relation label {0:?}")]
    UnknownRelation(String),
    #[error("synthetic generator: {0}")]
    Infeasible(String),
}
