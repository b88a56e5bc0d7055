//! Sentence-level relation records in the TACRED distribution's schema.

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataError;

/// One annotated sentence. Spans are inclusive token indices, as in the
/// source distribution.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RawExample {
    pub id: String,
    #[serde(alias = "token")]
    pub tokens: Vec<String>,
    pub subj_start: usize,
    pub subj_end: usize,
    pub obj_start: usize,
    pub obj_end: usize,
    pub subj_type: String,
    pub obj_type: String,
    #[serde(alias = "stanford_pos")]
    pub pos_tags: Vec<String>,
    #[serde(alias = "stanford_ner")]
    pub ner_tags: Vec<String>,
    pub relation: String,
}

impl RawExample {
    /// Invariant check: spans in bounds and tag rows parallel to tokens.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.tokens.len();
        if n == 0 {
            return Err("no tokens".to_string());
        }
        if self.subj_start > self.subj_end || self.subj_end >= n {
            return Err(format!(
                "subject span {}..={} out of bounds for {n} tokens",
                self.subj_start, self.subj_end
            ));
        }
        if self.obj_start > self.obj_end || self.obj_end >= n {
            return Err(format!(
                "object span {}..={} out of bounds for {n} tokens",
                self.obj_start, self.obj_end
            ));
        }
        if self.pos_tags.len() != n {
            return Err(format!(
                "{} PoS tags for {n} tokens",
                self.pos_tags.len()
            ));
        }
        if self.ner_tags.len() != n {
            return Err(format!(
                "{} NER tags for {n} tokens",
                self.ner_tags.len()
            ));
        }
        Ok(())
    }
}

/// A rejected record and why it was rejected.
#[derive(Debug, Clone)]
pub struct RecordIssue {
    pub id: String,
    pub reason: String,
}

impl fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}", self.id, self.reason)
    }
}

/// Parses a dataset from an in-memory string; `origin` labels error messages.
pub fn parse_dataset_str(text: &str, origin: &str) -> Result<Vec<RawExample>, DataError> {
    let examples: Vec<RawExample> =
        serde_json::from_str(text).map_err(|source| DataError::Parse {
            path: origin.to_string(),
            source,
        })?;
    check_records(examples, origin)
}

/// Loads and validates a dataset file (a JSON array of records). Every record
/// must pass [`RawExample::validate`]; failures are collected with ids.
pub fn load_dataset(path: &Path) -> Result<Vec<RawExample>, DataError> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: shown.clone(),
        source,
    })?;
    let examples: Vec<RawExample> = serde_json::from_reader(BufReader::new(file))
        .map_err(|source| DataError::Parse {
            path: shown.clone(),
            source,
        })?;
    check_records(examples, &shown)
}

fn check_records(
    examples: Vec<RawExample>,
    origin: &str,
) -> Result<Vec<RawExample>, DataError> {
    let issues: Vec<RecordIssue> = examples
        .iter()
        .filter_map(|ex| {
            ex.validate().err().map(|reason| RecordIssue {
                id: ex.id.clone(),
                reason,
            })
        })
        .collect();
    if issues.is_empty() {
        Ok(examples)
    } else {
        Err(DataError::MalformedRecords {
            path: origin.to_string(),
            issues,
        })
    }
}

#[cfg(test)]
pub(crate) fn example(
    id: &str,
    tokens: &[&str],
    subj: (usize, usize, &str),
    obj: (usize, usize, &str),
    relation: &str,
) -> RawExample {
    RawExample {
        id: id.to_string(),
        tokens: tokens.iter().map(|t| t.to_string()).collect(),
        subj_start: subj.0,
        subj_end: subj.1,
        obj_start: obj.0,
        obj_end: obj.1,
        subj_type: subj.2.to_string(),
        obj_type: obj.2.to_string(),
        pos_tags: vec!["N".to_string(); tokens.len()],
        ner_tags: vec!["O".to_string(); tokens.len()],
        relation: relation.to_string(),
    }
}
