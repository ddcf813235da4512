//! Brute-force references for the metrics, written from the definitions
//! with no shared code: pairwise enumeration, explicit thresholds, boolean
//! set arithmetic.

#![allow(dead_code)]

/// Fraction of (positive, negative) pairs ranked correctly, ties 1/2.
pub fn auroc(scores: &[f64], pos: &[bool]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// Sum over each distinct score t, from high to low, of the recall gained
/// by predicting {s >= t} times that prediction's precision.
pub fn average_precision(scores: &[f64], pos: &[bool]) -> Option<f64> {
    let total = pos.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut levels: Vec<f64> = scores.to_vec();
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    levels.dedup();
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for t in levels {
        let chosen: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let hits = chosen.iter().filter(|&&i| pos[i]).count();
        let precision = hits as f64 / chosen.len() as f64;
        let recall = hits as f64 / total as f64;
        ap += (recall - last_recall) * precision;
        last_recall = recall;
    }
    Some(ap)
}

fn count(v: &[bool]) -> usize {
    v.iter().filter(|&&b| b).count()
}

fn both(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| **x && **y).count()
}

fn either(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| **x || **y).count()
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Instances are (predicted, gold) membership vectors over the same tokens.
pub fn iou_f1(items: &[(Vec<bool>, Vec<bool>)], threshold: f64) -> f64 {
    let mut hits = 0.0;
    let mut predicted = 0.0;
    let mut gold = 0.0;
    for (p, g) in items {
        let u = either(p, g);
        if u == 0 {
            continue;
        }
        if count(p) > 0 {
            predicted += 1.0;
        }
        if count(g) > 0 {
            gold += 1.0;
        }
        if both(p, g) as f64 / u as f64 >= threshold {
            hits += 1.0;
        }
    }
    let prec = if predicted > 0.0 { hits / predicted } else { 0.0 };
    let rec = if gold > 0.0 { hits / gold } else { 0.0 };
    harmonic(prec, rec)
}

/// (precision, recall, f1), pooled over instances with any gold token.
pub fn token_prf(items: &[(Vec<bool>, Vec<bool>)]) -> (f64, f64, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fnn = 0.0;
    for (p, g) in items {
        if count(g) == 0 {
            continue;
        }
        for (x, y) in p.iter().zip(g) {
            match (x, y) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fnn += 1.0,
                _ => {}
            }
        }
    }
    let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let rec = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
    (prec, rec, harmonic(prec, rec))
}

/// (subgroup, bpsn, bnsp) for rows of (toxic, score, in_group).
pub fn bias_aucs(rows: &[(bool, f64, bool)]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let run = |keep: &dyn Fn(&(bool, f64, bool)) -> bool| {
        let kept: Vec<&(bool, f64, bool)> = rows.iter().filter(|r| keep(r)).collect();
        let s: Vec<f64> = kept.iter().map(|r| r.1).collect();
        let l: Vec<bool> = kept.iter().map(|r| r.0).collect();
        auroc(&s, &l)
    };
    (
        run(&|r| r.2),
        run(&|r| (r.0 && !r.2) || (!r.0 && r.2)),
        run(&|r| (r.0 && r.2) || (!r.0 && !r.2)),
    )
}

pub fn macro_f1(gold: &[usize], pred: &[usize], classes: usize) -> f64 {
    let mut sum = 0.0;
    for c in 0..classes {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count() as f64;
        let fp = gold.iter().zip(pred).filter(|(g, p)| **g != c && **p == c).count() as f64;
        let fnn = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p != c).count() as f64;
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
        sum += harmonic(prec, rec);
    }
    sum / classes as f64
}
