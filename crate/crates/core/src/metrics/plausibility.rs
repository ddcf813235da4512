//! Agreement between predicted and human token rationales.
//!
//! Token sets are content indices (0-based over the real words of an
//! encoding).

use std::collections::BTreeSet;

use super::classification::f1;
use super::ranking::average_precision;

/// Intersection over union; two empty sets give 1.
pub fn iou(pred: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> f64 {
    let union = pred.union(gold).count();
    if union == 0 {
        return 1.0;
    }
    pred.intersection(gold).count() as f64 / union as f64
}

/// Instance-level F1 where an instance is a hit when its IoU reaches
/// `threshold`. Precision is over instances with a predicted rationale,
/// recall over instances with a gold one. Doubly empty instances take no part.
pub fn iou_f1<'a, I>(pairs: I, threshold: f64) -> f64
where
    I: IntoIterator<Item = (&'a BTreeSet<usize>, &'a BTreeSet<usize>)>,
{
    let (mut hits, mut with_pred, mut with_gold) = (0usize, 0usize, 0usize);
    for (pred, gold) in pairs {
        if pred.is_empty() && gold.is_empty() {
            continue;
        }
        with_pred += !pred.is_empty() as usize;
        with_gold += !gold.is_empty() as usize;
        if iou(pred, gold) >= threshold {
            hits += 1;
        }
    }
    let p = if with_pred == 0 { 0.0 } else { hits as f64 / with_pred as f64 };
    let r = if with_gold == 0 { 0.0 } else { hits as f64 / with_gold as f64 };
    f1(p, r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged token precision/recall/F1 over instances whose gold set is
/// nonempty.
pub fn token_prf<'a, I>(pairs: I) -> TokenPrf
where
    I: IntoIterator<Item = (&'a BTreeSet<usize>, &'a BTreeSet<usize>)>,
{
    let (mut tp, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize);
    for (pred, gold) in pairs {
        if gold.is_empty() {
            continue;
        }
        tp += pred.intersection(gold).count();
        n_pred += pred.len();
        n_gold += gold.len();
    }
    let precision = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
    let recall = if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 };
    TokenPrf { precision, recall, f1: f1(precision, recall) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuprcMode {
    /// Average precision per instance, then the mean.
    #[default]
    PerInstance,
    /// One ranking over all tokens of all instances.
    Pooled,
}

/// Token AUPRC of soft scores against gold sets, over instances with at
/// least one gold token. `None` when there are none.
pub fn auprc<'a, I>(items: I, mode: AuprcMode) -> Option<f64>
where
    I: IntoIterator<Item = (&'a [f64], &'a BTreeSet<usize>)>,
{
    let mut per = Vec::new();
    let (mut all_scores, mut all_gold) = (Vec::new(), Vec::new());
    for (scores, gold) in items {
        if gold.is_empty() {
            continue;
        }
        let labels: Vec<bool> = (0..scores.len()).map(|i| gold.contains(&i)).collect();
        match mode {
            AuprcMode::PerInstance => per.extend(average_precision(scores, &labels)),
            AuprcMode::Pooled => {
                all_scores.extend_from_slice(scores);
                all_gold.extend(labels);
            }
        }
    }
    match mode {
        AuprcMode::PerInstance => {
            (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
        }
        AuprcMode::Pooled => average_precision(&all_scores, &all_gold),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&s(&[]), &s(&[])), 1.0);
        assert_eq!(iou(&s(&[1]), &s(&[])), 0.0);
        assert_eq!(iou(&s(&[1, 2]), &s(&[2, 3])), 1.0 / 3.0);
    }

    #[test]
    fn iou_f1_counts() {
        let a = [s(&[1, 2]), s(&[3]), s(&[]), s(&[])];
        let b = [s(&[1, 2]), s(&[4]), s(&[5]), s(&[])];
        // one hit; 2 with pred, 3 with gold
        let v = iou_f1(a.iter().zip(b.iter()), 0.5);
        assert!((v - f1(0.5, 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(iou_f1(std::iter::empty(), 0.5), 0.0);
    }

    #[test]
    fn token_prf_skips_empty_gold() {
        let p = [s(&[0, 1]), s(&[0, 1, 2])];
        let g = [s(&[1]), s(&[])];
        let r = token_prf(p.iter().zip(g.iter()));
        assert_eq!((r.precision, r.recall), (0.5, 1.0));
    }

    #[test]
    fn auprc_modes() {
        let a = [0.9, 0.1];
        let b = [0.2, 0.8];
        let g = s(&[0]);
        let items = || vec![(&a[..], &g), (&b[..], &g)];
        assert_eq!(auprc(items(), AuprcMode::PerInstance), Some(0.75));
        // pooled ranking 0.9+, 0.8-, 0.2+, 0.1-: 1/2 + 1/2 * 2/3
        let pooled = auprc(items(), AuprcMode::Pooled).unwrap();
        assert!((pooled - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(auprc(vec![(&a[..], &s(&[]))], AuprcMode::PerInstance), None);
    }
}
