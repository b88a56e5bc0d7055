//! Synthetic relation task with controllable long-range dependencies.
//!
//! Each sentence carries a single-token subject and object plus, for real
//! relations, one trigger token that alone determines the label and sits at
//! least `trigger_distance` positions away from both entities. Filler tokens
//! are label-independent noise, so a rule-based reader that knows the
//! trigger inventory recovers every label, and nothing else correlates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DataError, RawExample, NO_RELATION};

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub num_examples: usize,
    /// Filler vocabulary size (trigger and tag tokens live outside it).
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub num_relations: usize,
    /// Minimum token distance between the trigger and either entity.
    pub trigger_distance: usize,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |msg: String| Err(DataError::Infeasible(msg));
        if self.num_examples == 0 {
            return fail("num_examples must be positive".into());
        }
        if self.num_relations == 0 {
            return fail("need at least one relation class".into());
        }
        if self.vocab_size == 0 || self.vocab_size > 9999 {
            return fail(format!("vocab_size {} not in 1..=9999", self.vocab_size));
        }
        if self.min_len > self.max_len {
            return fail(format!(
                "min_len {} exceeds max_len {}",
                self.min_len, self.max_len
            ));
        }
        if self.max_len < self.trigger_distance + 3 {
            return fail(format!(
                "max_len {} cannot fit a trigger {} away from two entities (need at least {})",
                self.max_len,
                self.trigger_distance,
                self.trigger_distance + 3
            ));
        }
        Ok(())
    }

    /// All lengths are drawn from the feasible band so sentence length never
    /// correlates with whether a trigger is present.
    fn min_feasible_len(&self) -> usize {
        self.min_len.max(self.trigger_distance + 2).max(3)
    }
}

fn relation_name(r: usize) -> String {
    format!("rel{r:02}")
}

fn trigger_token(r: usize) -> String {
    format!("trig{r:02}")
}

/// The label a trigger-inventory reader assigns: the first trigger token's
/// relation, or no-relation when the sentence has no trigger.
pub fn rule_based_label(ex: &RawExample) -> String {
    for tok in &ex.tokens {
        if let Some(rest) = tok.strip_prefix("trig") {
            if let Ok(r) = rest.parse::<usize>() {
                return relation_name(r);
            }
        }
    }
    NO_RELATION.to_string()
}

const SUBJ_TYPES: [&str; 2] = ["PER", "ORG"];
const OBJ_TYPES: [&str; 3] = ["PER", "ORG", "LOC"];
const POS_TAGS: [&str; 4] = ["NOUN", "VERB", "ADJ", "ADV"];

/// Generates `num_examples` sentences with labels balanced round-robin over
/// (no-relation + the real relations), then shuffled. Fixed (config, seed)
/// give a bitwise-identical dataset.
pub fn generate_synthetic(
    config: &GeneratorConfig,
    seed: u64,
) -> Result<Vec<RawExample>, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = config.num_relations + 1; // class 0 is no-relation
    let lo = config.min_feasible_len();
    let mut out = Vec::with_capacity(config.num_examples);
    for i in 0..config.num_examples {
        let class = i % classes;
        let n = rng.random_range(lo..=config.max_len);
        let (s, o, trigger_pos) = place_entities_and_trigger(
            &mut rng,
            n,
            config.trigger_distance,
            class != 0,
        );
        let mut tokens: Vec<String> = (0..n)
            .map(|_| format!("w{:04}", rng.random_range(0..config.vocab_size)))
            .collect();
        if let Some(t) = trigger_pos {
            tokens[t] = trigger_token(class);
        }
        let subj_type = SUBJ_TYPES[rng.random_range(0..SUBJ_TYPES.len())];
        let obj_type = OBJ_TYPES[rng.random_range(0..OBJ_TYPES.len())];
        let pos_tags = (0..n)
            .map(|_| POS_TAGS[rng.random_range(0..POS_TAGS.len())].to_string())
            .collect();
        let mut ner_tags = vec!["O".to_string(); n];
        ner_tags[s] = subj_type.to_string();
        ner_tags[o] = obj_type.to_string();
        out.push(RawExample {
            id: format!("synth-{i:05}"),
            tokens,
            subj_start: s,
            subj_end: s,
            obj_start: o,
            obj_end: o,
            subj_type: subj_type.to_string(),
            obj_type: obj_type.to_string(),
            pos_tags,
            ner_tags,
            relation: if class == 0 {
                NO_RELATION.to_string()
            } else {
                relation_name(class)
            },
        });
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Picks subject and object positions and, when a trigger is wanted, a
/// position at least `dist` from both. Entity placement is rejection-sampled;
/// the corner layout (entities left, trigger right) is always feasible for
/// the lengths the config admits, so the loop terminates.
fn place_entities_and_trigger(
    rng: &mut ChaCha8Rng,
    n: usize,
    dist: usize,
    want_trigger: bool,
) -> (usize, usize, Option<usize>) {
    for _ in 0..100 {
        let s = rng.random_range(0..n);
        let o = rng.random_range(0..n);
        if s == o {
            continue;
        }
        if !want_trigger {
            return (s, o, None);
        }
        let feasible: Vec<usize> = (0..n)
            .filter(|&t| {
                t != s && t != o && t.abs_diff(s) >= dist && t.abs_diff(o) >= dist
            })
            .collect();
        if !feasible.is_empty() {
            let t = feasible[rng.random_range(0..feasible.len())];
            return (s, o, Some(t));
        }
    }
    // Corner fallback: n >= dist + 2 makes this valid.
    (0, 1, want_trigger.then_some(n - 1))
}

/// Deterministic contiguous split of an already-shuffled dataset.
pub fn split_synthetic(
    examples: Vec<RawExample>,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
) -> Result<(Vec<RawExample>, Vec<RawExample>, Vec<RawExample>), DataError> {
    let need = n_train + n_dev + n_test;
    if need > examples.len() {
        return Err(DataError::Infeasible(format!(
            "split {n_train}/{n_dev}/{n_test} needs {need} examples, have {}",
            examples.len()
        )));
    }
    let mut rest = examples;
    let test_off = n_train + n_dev;
    let test = rest.split_off(test_off);
    let dev = rest.split_off(n_train);
    let test = test.into_iter().take(n_test).collect();
    Ok((rest, dev, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn config() -> GeneratorConfig {
        GeneratorConfig {
            num_examples: 1200,
            vocab_size: 50,
            min_len: 12,
            max_len: 20,
            num_relations: 4,
            trigger_distance: 5,
        }
    }

    #[test]
    fn oracle_recovers_every_label() {
        let data = generate_synthetic(&config(), 1).unwrap();
        for ex in &data {
            assert_eq!(rule_based_label(ex), ex.relation, "example {}", ex.id);
            ex.validate().unwrap();
        }
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let a = generate_synthetic(&config(), 7).unwrap();
        let b = generate_synthetic(&config(), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&config(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn classes_are_near_uniform() {
        let data = generate_synthetic(&config(), 3).unwrap();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for ex in &data {
            *counts.entry(ex.relation.as_str()).or_default() += 1;
        }
        assert_eq!(counts.len(), 5);
        let uniform = data.len() as f64 / 5.0;
        for (&label, &c) in &counts {
            let dev = (c as f64 - uniform).abs() / uniform;
            assert!(dev <= 0.05, "{label} count {c} deviates {dev:.3} from uniform");
        }
    }

    #[test]
    fn triggers_keep_their_distance() {
        let cfg = config();
        let data = generate_synthetic(&cfg, 5).unwrap();
        let mut with_trigger = 0;
        for ex in &data {
            let trig = ex.tokens.iter().position(|t| t.starts_with("trig"));
            if ex.relation == NO_RELATION {
                assert!(trig.is_none(), "no-relation example {} has a trigger", ex.id);
                continue;
            }
            let t = trig.expect("relation example without trigger");
            with_trigger += 1;
            assert!(t.abs_diff(ex.subj_start) >= cfg.trigger_distance);
            assert!(t.abs_diff(ex.obj_start) >= cfg.trigger_distance);
        }
        assert!(with_trigger > 0);
    }

    #[test]
    fn lengths_stay_inside_the_band_and_never_leak_labels() {
        let cfg = config();
        let data = generate_synthetic(&cfg, 11).unwrap();
        for ex in &data {
            assert!(ex.tokens.len() >= cfg.min_len && ex.tokens.len() <= cfg.max_len);
        }
    }

    #[test]
    fn shuffled_triggers_break_the_oracle() {
        let data = generate_synthetic(&config(), 13).unwrap();
        let mut shuffled = data.clone();
        // Rotate the trigger tokens across trigger-bearing examples so each
        // sentence keeps its gold label but shows another example's trigger.
        let carriers: Vec<usize> = shuffled
            .iter()
            .enumerate()
            .filter(|(_, ex)| ex.relation != NO_RELATION)
            .map(|(i, _)| i)
            .collect();
        let triggers: Vec<String> = carriers
            .iter()
            .map(|&i| {
                shuffled[i]
                    .tokens
                    .iter()
                    .find(|t| t.starts_with("trig"))
                    .unwrap()
                    .clone()
            })
            .collect();
        for (k, &i) in carriers.iter().enumerate() {
            let donor = triggers[(k + 1) % triggers.len()].clone();
            let pos = shuffled[i]
                .tokens
                .iter()
                .position(|t| t.starts_with("trig"))
                .unwrap();
            shuffled[i].tokens[pos] = donor;
        }
        let acc = |set: &[RawExample], idx: &[usize]| -> f64 {
            let hits = idx
                .iter()
                .filter(|&&i| rule_based_label(&set[i]) == set[i].relation)
                .count();
            hits as f64 / idx.len() as f64
        };
        assert_eq!(acc(&data, &carriers), 1.0);
        let broken = acc(&shuffled, &carriers);
        assert!(broken < 0.5, "oracle survives trigger shuffle: {broken}");
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let mut cfg = config();
        cfg.max_len = 7; // needs trigger_distance + 3 = 8
        assert!(matches!(
            generate_synthetic(&cfg, 1),
            Err(DataError::Infeasible(_))
        ));
        let mut cfg = config();
        cfg.num_relations = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = config();
        cfg.min_len = 30;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn split_is_contiguous_and_sized() {
        let data = generate_synthetic(&config(), 2).unwrap();
        let ids: Vec<String> = data.iter().map(|e| e.id.clone()).collect();
        let (train, dev, test) = split_synthetic(data, 1000, 100, 100).unwrap();
        assert_eq!((train.len(), dev.len(), test.len()), (1000, 100, 100));
        assert_eq!(train[0].id, ids[0]);
        assert_eq!(dev[0].id, ids[1000]);
        assert_eq!(test[99].id, ids[1199]);
        let too_big = split_synthetic(vec![], 1, 0, 0);
        assert!(too_big.is_err());
    }
}
