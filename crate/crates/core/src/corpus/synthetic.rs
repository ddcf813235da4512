//! Planted-rationale corpora.
//!
//! Labels are decided by trigger words drawn from per-class lexicons, so the
//! rationale of every non-normal example is known exactly: the positions of
//! its triggers. Normal examples carry no triggers and no rationale.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Example};
use crate::rng::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Size of the word-id space; words are rendered as `w<id>`.
    pub vocab_size: usize,
    pub num_examples: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// One lexicon per non-normal class (class `k + 1` uses entry `k`).
    pub trigger_lexicons: Vec<Vec<usize>>,
    pub min_triggers: usize,
    pub max_triggers: usize,
    pub class_priors: Vec<f64>,
    pub group_token_table: BTreeMap<String, usize>,
    /// Probability that an example mentions one identity-group token.
    pub group_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Uniform priors, 20 triggers per class, 4 identity groups. Trigger and
    /// group ids are laid out at the top of the id space.
    pub fn with_classes(num_classes: usize, num_examples: usize, seed: u64) -> Self {
        let vocab_size = 400;
        let lexicon = 20;
        let trigger_lexicons = (0..num_classes.saturating_sub(1))
            .map(|k| {
                let base = vocab_size - lexicon * (k + 1);
                (base..base + lexicon).collect()
            })
            .collect();
        let group_token_table = ["group_a", "group_b", "group_c", "group_d"]
            .iter()
            .enumerate()
            .map(|(i, tag)| (tag.to_string(), i))
            .collect();
        Self {
            vocab_size,
            num_examples,
            min_len: 5,
            max_len: 14,
            trigger_lexicons,
            min_triggers: 1,
            max_triggers: 2,
            class_priors: vec![1.0 / num_classes as f64; num_classes],
            group_token_table,
            group_rate: 0.3,
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_priors.len()
    }

    pub fn word(id: usize) -> String {
        format!("w{id}")
    }

    fn validate(&self) -> Result<Vec<usize>> {
        let bad = |m: String| Err(Error::InvalidSynthetic(m));
        let c = self.num_classes();
        if c < 2 {
            return bad("need at least 2 classes".into());
        }
        if self.trigger_lexicons.len() != c - 1 {
            return bad(format!(
                "{} trigger lexicons for {} non-normal classes",
                self.trigger_lexicons.len(),
                c - 1
            ));
        }
        let prior_sum: f64 = self.class_priors.iter().sum();
        if (prior_sum - 1.0).abs() > 1e-9 || self.class_priors.iter().any(|&p| p < 0.0) {
            return bad(format!("class priors sum to {prior_sum}"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        if self.min_triggers == 0
            || self.min_triggers > self.max_triggers
            || self.max_triggers > self.min_len
        {
            return bad(format!(
                "triggers {}..={} must be >= 1 and fit in {} words",
                self.min_triggers, self.max_triggers, self.min_len
            ));
        }
        if !(0.0..=1.0).contains(&self.group_rate) {
            return bad(format!("group rate {}", self.group_rate));
        }
        let mut triggers = HashSet::new();
        for lex in &self.trigger_lexicons {
            if lex.is_empty() {
                return bad("empty trigger lexicon".into());
            }
            for &w in lex {
                if w >= self.vocab_size {
                    return bad(format!("trigger id {w} beyond vocab {}", self.vocab_size));
                }
                if !triggers.insert(w) {
                    return bad(format!("trigger id {w} shared between lexicons"));
                }
            }
        }
        let groups: HashSet<usize> = self.group_token_table.values().copied().collect();
        for &g in &groups {
            if g >= self.vocab_size || triggers.contains(&g) {
                return bad(format!("group token {g} is a trigger or out of range"));
            }
        }
        let filler: Vec<usize> = (0..self.vocab_size)
            .filter(|w| !triggers.contains(w) && !groups.contains(w))
            .collect();
        if filler.is_empty() {
            return bad(format!(
                "vocab of {} leaves no neutral words after triggers and group tokens",
                self.vocab_size
            ));
        }
        Ok(filler)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let filler = spec.validate()?;
    let c = spec.num_classes();
    let mut rng = rng::stream(spec.seed, Stream::Synthetic);
    let priors = WeightedIndex::new(&spec.class_priors)
        .map_err(|e| Error::InvalidSynthetic(e.to_string()))?;
    let groups: Vec<(&String, usize)> =
        spec.group_token_table.iter().map(|(t, &w)| (t, w)).collect();

    let mut examples = Vec::with_capacity(spec.num_examples);
    for i in 0..spec.num_examples {
        let label = priors.sample(&mut rng);
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut ids: Vec<usize> = (0..len)
            .map(|_| filler[rng.gen_range(0..filler.len())])
            .collect();
        let mut mask = vec![0u8; len];
        if label > 0 {
            let lex = &spec.trigger_lexicons[label - 1];
            let k = rng.gen_range(spec.min_triggers..=spec.max_triggers);
            for pos in sample(&mut rng, len, k).into_iter() {
                ids[pos] = lex[rng.gen_range(0..lex.len())];
                mask[pos] = 1;
            }
        }
        let mut target_groups = BTreeSet::new();
        if !groups.is_empty() && rng.gen_bool(spec.group_rate) {
            let (tag, word) = groups[rng.gen_range(0..groups.len())];
            let free: Vec<usize> = (0..len).filter(|&p| mask[p] == 0).collect();
            if !free.is_empty() {
                ids[free[rng.gen_range(0..free.len())]] = word;
                target_groups.insert(tag.clone());
            }
        }
        let words: Vec<String> = ids.iter().map(|&w| SyntheticSpec::word(w)).collect();
        examples.push(Example {
            id: format!("syn-{i:06}"),
            text: words.join(" "),
            words,
            label,
            annotator_labels: vec![label],
            annotator_word_masks: if label > 0 { vec![mask] } else { Vec::new() },
            char_spans: Vec::new(),
            target_groups,
        });
    }

    let label_names = (0..c)
        .map(|k| if k == 0 { "normal".to_string() } else { format!("toxic_{k}") })
        .collect();
    Dataset::new(
        examples,
        c,
        label_names,
        spec.group_token_table.keys().cloned().collect(),
    )
}
