//! Vocabularies for tokens, PoS tags, NER tags, and relation labels, with
//! deterministic (sorted) id assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{mask_entities, DataError, RawExample};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<PAD>";
pub const UNK_TOKEN: &str = "<UNK>";
pub const NO_RELATION: &str = "no_relation";

/// A fully id-encoded example ready for batching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessedExample {
    pub id: String,
    pub token_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub ner_ids: Vec<usize>,
    /// Half-open token ranges (the raw schema's inclusive ends converted).
    pub subj_span: Range<usize>,
    pub obj_span: Range<usize>,
    pub label_id: usize,
}

/// Token/PoS/NER vocabularies carry PAD=0 and UNK=1; the relation vocabulary
/// has neither but always contains the no-relation label. All id orders are
/// sorted, so identical corpora produce identical vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    pos: Vec<String>,
    ner: Vec<String>,
    relations: Vec<String>,
    #[serde(skip)]
    word_ids: BTreeMap<String, usize>,
    #[serde(skip)]
    pos_ids: BTreeMap<String, usize>,
    #[serde(skip)]
    ner_ids: BTreeMap<String, usize>,
    #[serde(skip)]
    rel_ids: BTreeMap<String, usize>,
    /// How many vocabulary words the pretrained embedding set covers.
    pub pretrained_covered: usize,
}

/// Mask tokens keep their case (they are synthetic symbols, not words);
/// everything else is lowercased to match pretrained vector conventions.
pub(crate) fn normalize_token(tok: &str) -> String {
    if tok.starts_with("SUBJ-") || tok.starts_with("OBJ-") {
        tok.to_string()
    } else {
        tok.to_lowercase()
    }
}

fn index(items: &[String]) -> BTreeMap<String, usize> {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect()
}

fn with_specials(set: BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(set.len() + 2);
    out.push(PAD_TOKEN.to_string());
    out.push(UNK_TOKEN.to_string());
    out.extend(set.into_iter().filter(|t| t != PAD_TOKEN && t != UNK_TOKEN));
    out
}

/// Builds all four vocabularies from a training set. The pretrained token set
/// never filters anything; it only feeds the coverage count (missing words
/// are random-initialized later).
pub fn build_vocab(
    train: &[RawExample],
    pretrained: &BTreeSet<String>,
) -> Result<Vocabulary, DataError> {
    if train.is_empty() {
        return Err(DataError::Empty);
    }
    let mut words = BTreeSet::new();
    let mut pos = BTreeSet::new();
    let mut ner = BTreeSet::new();
    let mut relations = BTreeSet::new();
    for ex in train {
        for tok in mask_entities(ex)? {
            words.insert(normalize_token(&tok));
        }
        pos.extend(ex.pos_tags.iter().cloned());
        ner.extend(ex.ner_tags.iter().cloned());
        relations.insert(ex.relation.clone());
    }
    relations.insert(NO_RELATION.to_string());
    Vocabulary::from_lists(
        with_specials(words),
        with_specials(pos),
        with_specials(ner),
        relations.into_iter().collect(),
        pretrained,
    )
}

impl Vocabulary {
    /// Reassembles a vocabulary from id-ordered lists (checkpoint load path).
    pub fn from_lists(
        words: Vec<String>,
        pos: Vec<String>,
        ner: Vec<String>,
        relations: Vec<String>,
        pretrained: &BTreeSet<String>,
    ) -> Result<Self, DataError> {
        for (name, list) in [("word", &words), ("PoS", &pos), ("NER", &ner)] {
            if list.first().map(String::as_str) != Some(PAD_TOKEN)
                || list.get(1).map(String::as_str) != Some(UNK_TOKEN)
            {
                return Err(DataError::BadRecord {
                    id: "<vocabulary>".to_string(),
                    reason: format!("{name} vocabulary must start with {PAD_TOKEN}, {UNK_TOKEN}"),
                });
            }
        }
        if !relations.iter().any(|r| r == NO_RELATION) {
            return Err(DataError::UnknownRelation(NO_RELATION.to_string()));
        }
        let pretrained_covered = words.iter().filter(|w| pretrained.contains(*w)).count();
        let v = Vocabulary {
            word_ids: index(&words),
            pos_ids: index(&pos),
            ner_ids: index(&ner),
            rel_ids: index(&relations),
            words,
            pos,
            ner,
            relations,
            pretrained_covered,
        };
        if v.word_ids.len() != v.words.len() || v.rel_ids.len() != v.relations.len() {
            return Err(DataError::BadRecord {
                id: "<vocabulary>".to_string(),
                reason: "duplicate entries".to_string(),
            });
        }
        Ok(v)
    }

    /// Restores the lookup maps after deserialization skipped them.
    pub fn rebuild_indexes(&mut self) {
        self.word_ids = index(&self.words);
        self.pos_ids = index(&self.pos);
        self.ner_ids = index(&self.ner);
        self.rel_ids = index(&self.relations);
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn pos_count(&self) -> usize {
        self.pos.len()
    }

    pub fn ner_count(&self) -> usize {
        self.ner.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn pos_tags(&self) -> &[String] {
        &self.pos
    }

    pub fn ner_tags(&self) -> &[String] {
        &self.ner
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn word_id(&self, token: &str) -> Option<usize> {
        self.word_ids.get(token).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<usize> {
        self.rel_ids.get(label).copied()
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relations[id]
    }

    pub fn no_relation_id(&self) -> usize {
        self.rel_ids[NO_RELATION]
    }

    pub fn decode_tokens(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.words[i].clone()).collect()
    }

    /// Masks, normalizes, and id-encodes one example. Unknown words and tags
    /// map to UNK; an unknown relation label is an error.
    pub fn encode(&self, ex: &RawExample) -> Result<ProcessedExample, DataError> {
        let masked = mask_entities(ex)?;
        let token_ids = masked
            .iter()
            .map(|t| {
                self.word_ids
                    .get(&normalize_token(t))
                    .copied()
                    .unwrap_or(UNK_ID)
            })
            .collect();
        let pos_ids = ex
            .pos_tags
            .iter()
            .map(|t| self.pos_ids.get(t).copied().unwrap_or(UNK_ID))
            .collect();
        let ner_ids = ex
            .ner_tags
            .iter()
            .map(|t| self.ner_ids.get(t).copied().unwrap_or(UNK_ID))
            .collect();
        let label_id = self
            .relation_id(&ex.relation)
            .ok_or_else(|| DataError::UnknownRelation(ex.relation.clone()))?;
        Ok(ProcessedExample {
            id: ex.id.clone(),
            token_ids,
            pos_ids,
            ner_ids,
            subj_span: ex.subj_start..ex.subj_end + 1,
            obj_span: ex.obj_start..ex.obj_end + 1,
            label_id,
        })
    }

    pub fn encode_all(&self, exs: &[RawExample]) -> Result<Vec<ProcessedExample>, DataError> {
        exs.iter().map(|ex| self.encode(ex)).collect()
    }
}
