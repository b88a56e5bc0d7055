//! Batching with per-batch padding and validity masks.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DataError, ProcessedExample, PAD_ID};

/// A padded batch. Id matrices are row-major `size x width`; `mask` is true
/// exactly at positions before each example's true length, and every padded
/// cell holds the PAD id.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub width: usize,
    pub token_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub ner_ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub mask: Vec<bool>,
    pub subj_spans: Vec<Range<usize>>,
    pub obj_spans: Vec<Range<usize>>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl Batch {
    fn from_examples(examples: &[&ProcessedExample]) -> Batch {
        let size = examples.len();
        let width = examples
            .iter()
            .map(|e| e.token_ids.len())
            .max()
            .unwrap_or(0);
        let mut b = Batch {
            size,
            width,
            token_ids: vec![PAD_ID; size * width],
            pos_ids: vec![PAD_ID; size * width],
            ner_ids: vec![PAD_ID; size * width],
            lengths: Vec::with_capacity(size),
            mask: vec![false; size * width],
            subj_spans: Vec::with_capacity(size),
            obj_spans: Vec::with_capacity(size),
            labels: Vec::with_capacity(size),
            ids: Vec::with_capacity(size),
        };
        for (i, ex) in examples.iter().enumerate() {
            let n = ex.token_ids.len();
            let base = i * width;
            b.token_ids[base..base + n].copy_from_slice(&ex.token_ids);
            b.pos_ids[base..base + n].copy_from_slice(&ex.pos_ids);
            b.ner_ids[base..base + n].copy_from_slice(&ex.ner_ids);
            b.mask[base..base + n].fill(true);
            b.lengths.push(n);
            b.subj_spans.push(ex.subj_span.clone());
            b.obj_spans.push(ex.obj_span.clone());
            b.labels.push(ex.label_id);
            b.ids.push(ex.id.clone());
        }
        b
    }

    pub fn token_row(&self, i: usize) -> &[usize] {
        &self.token_ids[i * self.width..(i + 1) * self.width]
    }

    pub fn pos_row(&self, i: usize) -> &[usize] {
        &self.pos_ids[i * self.width..(i + 1) * self.width]
    }

    pub fn ner_row(&self, i: usize) -> &[usize] {
        &self.ner_ids[i * self.width..(i + 1) * self.width]
    }

    pub fn mask_row(&self, i: usize) -> &[bool] {
        &self.mask[i * self.width..(i + 1) * self.width]
    }
}

/// Splits examples into padded batches. `shuffle_seed` makes the order a pure
/// function of the seed; `None` keeps input order (evaluation). The final
/// partial batch is kept.
pub fn make_batches(
    examples: &[ProcessedExample],
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>, DataError> {
    if examples.is_empty() {
        return Err(DataError::Empty);
    }
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&ProcessedExample> = chunk.iter().map(|&i| &examples[i]).collect();
            Batch::from_examples(&refs)
        })
        .collect())
}
