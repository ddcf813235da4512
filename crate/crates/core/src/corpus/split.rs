use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::rng::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    #[serde(alias = "val")]
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
    /// Absent in externally supplied divisions (e.g. HateXplain's
    /// `post_id_divisions.json`), where both stay zero.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ratios: [f64; 3],
}

impl SplitAssignment {
    pub fn ids(&self, which: SplitName) -> &BTreeSet<String> {
        match which {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }
}

/// Per-class shuffled allocation into train/validation/test.
///
/// Within each class the split sizes come from largest-remainder rounding
/// of `ratio * class_count`, so every class is represented in proportion.
pub fn stratified_split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::InvalidSplit(format!("ratios out of [0,1]: {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!("ratios sum to {total}, not 1")));
    }

    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); dataset.num_classes];
    for ex in &dataset.examples {
        by_class[ex.label].push(ex.id.as_str());
    }
    for (c, ids) in by_class.iter().enumerate() {
        if ids.len() < ratios.len() {
            return Err(Error::InvalidSplit(format!(
                "class {c} has {} examples, fewer than the {} splits",
                ids.len(),
                ratios.len()
            )));
        }
    }

    let mut rng = rng::stream(seed, Stream::Split);
    let mut out = [BTreeSet::new(), BTreeSet::new(), BTreeSet::new()];
    for ids in &mut by_class {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let sizes = allocate(ids.len(), &ratios);
        let mut start = 0;
        for (k, &size) in sizes.iter().enumerate() {
            out[k].extend(ids[start..start + size].iter().map(|s| s.to_string()));
            start += size;
        }
    }
    let [train, validation, test] = out;
    Ok(SplitAssignment {
        train,
        validation,
        test,
        seed,
        ratios,
    })
}

fn allocate(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    // Largest fractional part first; earlier split wins ties.
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[k] += 1;
        rest -= 1;
    }
    sizes
}
