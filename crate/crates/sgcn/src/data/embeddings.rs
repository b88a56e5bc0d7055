//! Pretrained word-vector loading in the plain-text format: one token per
//! line followed by its values, whitespace-separated.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::data::{DataError, Vocabulary, PAD_ID};
use crate::scalar::Scalar;

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// First pass over an embedding file: just the token column, for vocabulary
/// coverage accounting.
pub fn pretrained_token_set(path: &Path) -> Result<BTreeSet<String>, DataError> {
    let mut set = BTreeSet::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if let Some(tok) = line.split_whitespace().next() {
            set.insert(tok.to_string());
        }
    }
    Ok(set)
}

/// Builds the word embedding table for `vocab`: every row starts from
/// uniform(-1/sqrt(dim), 1/sqrt(dim)) noise, rows whose token appears in the
/// file are overwritten with the file values (first occurrence wins), and the
/// PAD row ends up all zero. File tokens are matched verbatim against the
/// vocabulary, which stores ordinary words lowercased.
pub fn load_pretrained_embeddings<S: Scalar>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<Tensor<S>, DataError> {
    let v = vocab.word_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (dim as f64).sqrt();
    let mut values: Vec<S> = (0..v * dim)
        .map(|_| S::from_f64(rng.random_range(-bound..=bound)))
        .collect();
    values[PAD_ID * dim..(PAD_ID + 1) * dim].fill(S::zero());

    let shown = path.display().to_string();
    let mut seen = vec![false; v];
    for (i, line) in open(path)?.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| DataError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue; // blank line
        };
        let parsed: Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let nums = parsed.map_err(|e| DataError::EmbeddingParse {
            path: shown.clone(),
            line: line_no,
            reason: e.to_string(),
        })?;
        if nums.len() != dim {
            return Err(DataError::EmbeddingWidth {
                path: shown.clone(),
                line: line_no,
                expected: dim,
                found: nums.len(),
            });
        }
        let Some(id) = vocab.word_id(token) else {
            continue;
        };
        if id == PAD_ID || seen[id] {
            continue;
        }
        seen[id] = true;
        for (j, x) in nums.into_iter().enumerate() {
            values[id * dim + j] = S::from_f64(x);
        }
    }
    Ok(Tensor::new(vec![v, dim], values).expect("table shape is consistent by construction"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::raw::example;
    use crate::data::{build_vocab, UNK_ID};
    use std::io::Write;

    fn vocab() -> Vocabulary {
        // Entities sit at the ends so alpha/beta/gamma survive masking.
        let train = vec![example(
            "t1",
            &["head", "alpha", "beta", "gamma", "tail"],
            (0, 0, "PER"),
            (4, 4, "LOC"),
            "r1",
        )];
        build_vocab(&train, &BTreeSet::new()).unwrap()
    }

    fn write_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn file_rows_are_copied_exactly() {
        let v = vocab();
        let f = write_file("beta 1.5 -2.25 0.125\nmissing 9 9 9\n");
        let table = load_pretrained_embeddings::<f64>(f.path(), &v, 3, 7).unwrap();
        let id = v.word_id("beta").unwrap();
        assert_eq!(table.values()[id * 3..(id + 1) * 3], [1.5, -2.25, 0.125]);
    }

    #[test]
    fn empty_file_gives_random_rows_and_zero_pad() {
        let v = vocab();
        let f = write_file("");
        let a = load_pretrained_embeddings::<f64>(f.path(), &v, 4, 7).unwrap();
        let b = load_pretrained_embeddings::<f64>(f.path(), &v, 4, 7).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.values()[..4].iter().all(|&x| x == 0.0));
        assert!(a.values()[UNK_ID * 4..(UNK_ID + 1) * 4]
            .iter()
            .any(|&x| x != 0.0));
        let bound = 1.0 / 2.0;
        assert!(a.values().iter().all(|&x| x.abs() <= bound));
    }

    #[test]
    fn wrong_width_line_is_rejected_with_line_number() {
        let v = vocab();
        let f = write_file("alpha 1 2 3\nbeta 1 2\n");
        match load_pretrained_embeddings::<f64>(f.path(), &v, 3, 7).unwrap_err() {
            DataError::EmbeddingWidth { line, expected, found, .. } => {
                assert_eq!((line, expected, found), (2, 3, 2));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unparsable_value_is_rejected() {
        let v = vocab();
        let f = write_file("alpha 1 x 3\n");
        assert!(matches!(
            load_pretrained_embeddings::<f64>(f.path(), &v, 3, 7),
            Err(DataError::EmbeddingParse { line: 1, .. })
        ));
    }

    #[test]
    fn first_duplicate_occurrence_wins() {
        let v = vocab();
        let f = write_file("gamma 1 1 1\ngamma 2 2 2\n");
        let table = load_pretrained_embeddings::<f64>(f.path(), &v, 3, 7).unwrap();
        let id = v.word_id("gamma").unwrap();
        assert_eq!(table.values()[id * 3..(id + 1) * 3], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn token_set_reads_first_column() {
        let f = write_file("alpha 1 2\nbeta 3 4\n");
        let set = pretrained_token_set(f.path()).unwrap();
        assert!(set.contains("alpha") && set.contains("beta"));
        assert_eq!(set.len(), 2);
    }
}
