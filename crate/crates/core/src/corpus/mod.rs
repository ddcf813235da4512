//! Rationale-annotated datasets.
//!
//! Everything downstream consumes the [`Dataset`] type; the loaders adapt
//! external layouts into it and [`io`] reads and writes the canonical
//! record-per-line form.

mod hatebr;
mod hatexplain;
pub mod io;
mod split;
mod synthetic;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use hatebr::{load_hatebrxplain, load_hatebrxplain_reader};
pub use hatexplain::{load_hatexplain, load_hatexplain_str};
pub use split::{stratified_split, SplitAssignment, SplitName};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Half-open character interval `[start, end)` into `Example::text`.
pub type CharSpan = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    /// Raw text; empty when the source is pre-tokenized.
    #[serde(default)]
    pub text: String,
    pub words: Vec<String>,
    pub label: usize,
    #[serde(default)]
    pub annotator_labels: Vec<usize>,
    /// One binary vector per annotator that supplied a word-level rationale.
    #[serde(default)]
    pub annotator_word_masks: Vec<Vec<u8>>,
    /// Character spans grouped per annotator; an annotator that highlighted
    /// nothing is absent rather than present with an empty list.
    #[serde(default)]
    pub char_spans: Vec<Vec<CharSpan>>,
    #[serde(default)]
    pub target_groups: BTreeSet<String>,
}

impl Example {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |reason: String| Error::MalformedRecord {
            id: self.id.clone(),
            reason,
        };
        if self.label >= num_classes {
            return Err(bad(format!(
                "label {} out of range for {num_classes} classes",
                self.label
            )));
        }
        if !self.annotator_word_masks.is_empty() && !self.char_spans.is_empty() {
            return Err(bad("both word masks and character spans present".into()));
        }
        for mask in &self.annotator_word_masks {
            if mask.len() != self.words.len() {
                return Err(bad(format!(
                    "rationale length {} != word count {}",
                    mask.len(),
                    self.words.len()
                )));
            }
            if mask.iter().any(|&v| v > 1) {
                return Err(bad("rationale mask is not binary".into()));
            }
        }
        let text_len = self.text.chars().count();
        for &(start, end) in self.char_spans.iter().flatten() {
            if start >= end || end > text_len {
                return Err(bad(format!(
                    "span ({start},{end}) outside text of {text_len} characters"
                )));
            }
        }
        Ok(())
    }

    pub fn has_rationale(&self) -> bool {
        self.annotator_word_masks
            .iter()
            .any(|m| m.iter().any(|&v| v == 1))
            || self.char_spans.iter().any(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub num_classes: usize,
    pub label_names: Vec<String>,
    pub group_vocabulary: BTreeSet<String>,
}

impl Dataset {
    /// Builds a dataset and checks its invariants. The group vocabulary is
    /// extended with every tag that appears on an example.
    pub fn new(
        examples: Vec<Example>,
        num_classes: usize,
        label_names: Vec<String>,
        mut group_vocabulary: BTreeSet<String>,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if label_names.len() != num_classes {
            return Err(Error::InvalidDataset(format!(
                "{} label names for {num_classes} classes",
                label_names.len()
            )));
        }
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            ex.validate(num_classes)?;
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate id {}", ex.id)));
            }
            group_vocabulary.extend(ex.target_groups.iter().cloned());
        }
        Ok(Self {
            examples,
            num_classes,
            label_names,
            group_vocabulary,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }

    /// Sub-dataset holding the given ids, in dataset order.
    pub fn subset(&self, ids: &BTreeSet<String>) -> Dataset {
        Dataset {
            examples: self
                .examples
                .iter()
                .filter(|ex| ids.contains(&ex.id))
                .cloned()
                .collect(),
            num_classes: self.num_classes,
            label_names: self.label_names.clone(),
            group_vocabulary: self.group_vocabulary.clone(),
        }
    }
}

/// Majority label with ties going to the lowest class index.
pub fn majority_label(labels: &[usize], num_classes: usize) -> Option<usize> {
    if labels.is_empty() {
        return None;
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let best = *counts.iter().max()?;
    counts.iter().position(|&c| c == best)
}
