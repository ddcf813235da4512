//! Label-level scores.

pub fn confusion(gold: &[usize], pred: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    assert_eq!(gold.len(), pred.len(), "gold and prediction counts differ");
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&g, &p) in gold.iter().zip(pred) {
        m[g][p] += 1;
    }
    m
}

pub fn accuracy_labels(gold: &[usize], pred: &[usize]) -> f64 {
    assert_eq!(gold.len(), pred.len(), "gold and prediction counts differ");
    if gold.is_empty() {
        return 0.0;
    }
    gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / gold.len() as f64
}

/// F1 per class. A class with no gold and no predicted instances scores 0.
pub fn per_class_f1(gold: &[usize], pred: &[usize], num_classes: usize) -> Vec<f64> {
    let m = confusion(gold, pred, num_classes);
    (0..num_classes)
        .map(|c| {
            let tp = m[c][c] as f64;
            let predicted: usize = (0..num_classes).map(|g| m[g][c]).sum();
            let actual: usize = m[c].iter().sum();
            let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
            f1(p, r)
        })
        .collect()
}

pub fn macro_f1_labels(gold: &[usize], pred: &[usize], num_classes: usize) -> f64 {
    let per = per_class_f1(gold, pred, num_classes);
    per.iter().sum::<f64>() / num_classes as f64
}

pub(crate) fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
