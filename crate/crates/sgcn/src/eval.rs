//! Micro-averaged precision/recall/F1 with the no-relation convention:
//! predictions and gold labels equal to the designated no-relation class are
//! excluded from the positive counts, so a model scoring only "no relation"
//! earns zero across the board.

use std::collections::BTreeMap;
use std::fmt::Display;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} labels, predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RelationCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

/// Micro scores plus a per-relation breakdown (no-relation excluded).
#[derive(Debug, Clone)]
pub struct ScoreReport<L: Ord> {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_relation: BTreeMap<L, RelationCounts>,
}

impl<L: Ord + Display> ScoreReport<L> {
    /// One line, tab-separated, percentages with one decimal.
    pub fn tsv_summary(&self) -> String {
        format!(
            "{}\t{}\t{}",
            pct1(self.precision),
            pct1(self.recall),
            pct1(self.f1)
        )
    }

    /// Per-relation lines "label gold predicted correct P R F1",
    /// tab-separated, sorted by label.
    pub fn tsv_per_relation(&self) -> String {
        let mut out = String::new();
        for (label, c) in &self.per_relation {
            let p = ratio(c.correct, c.predicted);
            let r = ratio(c.correct, c.gold);
            let f1 = f1(p, r);
            out.push_str(&format!(
                "{label}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                c.gold,
                c.predicted,
                c.correct,
                pct1(p),
                pct1(r),
                pct1(f1)
            ));
        }
        out
    }
}

/// Formats a [0,1] ratio as a percentage with one decimal, Table-style.
pub fn pct1(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Micro-averaged P/R/F1 over parallel gold and predicted label slices.
///
/// correct = |{i : gold_i = pred_i != no_relation}|,
/// P = correct / |{i : pred_i != no_relation}|,
/// R = correct / |{i : gold_i != no_relation}|,
/// with zero denominators scoring 0.
pub fn micro_prf<L: Ord + Clone>(
    gold: &[L],
    pred: &[L],
    no_relation: &L,
) -> Result<ScoreReport<L>, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut per: BTreeMap<L, RelationCounts> = BTreeMap::new();
    let (mut n_gold, mut n_pred, mut n_correct) = (0usize, 0usize, 0usize);
    for (g, p) in gold.iter().zip(pred.iter()) {
        if g != no_relation {
            n_gold += 1;
            per.entry(g.clone()).or_default().gold += 1;
        }
        if p != no_relation {
            n_pred += 1;
            per.entry(p.clone()).or_default().predicted += 1;
        }
        if g == p && g != no_relation {
            n_correct += 1;
            per.entry(g.clone()).or_default().correct += 1;
        }
    }
    let precision = ratio(n_correct, n_pred);
    let recall = ratio(n_correct, n_gold);
    Ok(ScoreReport {
        precision,
        recall,
        f1: f1(precision, recall),
        per_relation: per,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const NO_REL: &str = "no_relation";

    #[test]
    fn hand_example_scores_one_half() {
        let gold = ["r1", NO_REL, "r2"];
        let pred = ["r1", "r2", NO_REL];
        let report = micro_prf(&gold, &pred, &NO_REL).unwrap();
        assert_eq!(report.precision, 0.5);
        assert_eq!(report.recall, 0.5);
        assert_eq!(report.f1, 0.5);
        assert_eq!(report.tsv_summary(), "50.0\t50.0\t50.0");
    }

    #[test]
    fn all_no_relation_predictions_score_zero() {
        let gold = ["r1", "r2", NO_REL];
        let pred = [NO_REL; 3];
        let report = micro_prf(&gold, &pred, &NO_REL).unwrap();
        assert_eq!(report.precision, 0.0);
        assert_eq!(report.recall, 0.0);
        assert_eq!(report.f1, 0.0);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gold = ["r1", NO_REL, "r2", "r1"];
        let report = micro_prf(&gold, &gold, &NO_REL).unwrap();
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.f1, 1.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let err = micro_prf(&["r1"], &["r1", "r2"], &NO_REL).unwrap_err();
        assert!(matches!(
            err,
            EvalError::LengthMismatch { gold: 1, pred: 2 }
        ));
    }

    #[test]
    fn per_relation_corrects_sum_to_micro_correct() {
        let gold = ["a", "b", "a", NO_REL, "c", "b"];
        let pred = ["a", "b", "b", "a", NO_REL, "b"];
        let report = micro_prf(&gold, &pred, &NO_REL).unwrap();
        let total: usize = report.per_relation.values().map(|c| c.correct).sum();
        // 3 positions agree on a real relation: a, b, b.
        assert_eq!(total, 3);
        assert!(!report.per_relation.contains_key(NO_REL));
    }

    /// Straight recount written against the definition, no shared code.
    fn brute_force(gold: &[u8], pred: &[u8], no_rel: u8) -> (f64, f64, f64) {
        let correct = gold
            .iter()
            .zip(pred)
            .filter(|(g, p)| g == p && **g != no_rel)
            .count() as f64;
        let p_den = pred.iter().filter(|p| **p != no_rel).count() as f64;
        let g_den = gold.iter().filter(|g| **g != no_rel).count() as f64;
        let p = if p_den > 0.0 { correct / p_den } else { 0.0 };
        let r = if g_den > 0.0 { correct / g_den } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        (p, r, f)
    }

    proptest! {
        #[test]
        fn matches_brute_force_recount(
            pairs in proptest::collection::vec((0u8..6, 0u8..6), 0..200)
        ) {
            let gold: Vec<u8> = pairs.iter().map(|(g, _)| *g).collect();
            let pred: Vec<u8> = pairs.iter().map(|(_, p)| *p).collect();
            let report = micro_prf(&gold, &pred, &0).unwrap();
            let (p, r, f) = brute_force(&gold, &pred, 0);
            prop_assert_eq!(report.precision, p);
            prop_assert_eq!(report.recall, r);
            prop_assert_eq!(report.f1, f);
        }

        #[test]
        fn invariant_under_joint_permutation(
            pairs in proptest::collection::vec((0u8..5, 0u8..5), 1..100),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let score = |ps: &[(u8, u8)]| {
                let g: Vec<u8> = ps.iter().map(|x| x.0).collect();
                let p: Vec<u8> = ps.iter().map(|x| x.1).collect();
                micro_prf(&g, &p, &0).unwrap()
            };
            let a = score(&pairs);
            let b = score(&shuffled);
            prop_assert_eq!(a.precision, b.precision);
            prop_assert_eq!(a.recall, b.recall);
            prop_assert_eq!(a.f1, b.f1);
            prop_assert_eq!(a.per_relation, b.per_relation);
        }

        /// Rewriting no-relation predictions to a wrong real label can add
        /// false positives but never new correct hits.
        #[test]
        fn flipping_no_rel_predictions_never_raises_precision(
            pairs in proptest::collection::vec((0u8..5, 0u8..5), 1..100),
            target in 1u8..5,
        ) {
            let gold: Vec<u8> = pairs.iter().map(|x| x.0).collect();
            let pred: Vec<u8> = pairs.iter().map(|x| x.1).collect();
            let flipped: Vec<u8> = gold
                .iter()
                .zip(&pred)
                .map(|(&g, &p)| {
                    if p == 0 && g != target { target } else { p }
                })
                .collect();
            let before = micro_prf(&gold, &pred, &0).unwrap();
            let after = micro_prf(&gold, &flipped, &0).unwrap();
            prop_assert!(after.precision <= before.precision + 1e-12);
            prop_assert_eq!(after.recall, before.recall);
        }
    }
}
