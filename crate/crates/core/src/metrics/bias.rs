//! Per-group ranking fairness and their generalized power mean.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ranking::auroc;
use crate::{Error, Result};

/// One instance as the bias metrics see it.
#[derive(Debug, Clone, Copy)]
pub struct BiasItem<'a> {
    pub toxic: bool,
    pub score: f64,
    pub groups: &'a BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupAucs {
    pub subgroup: Option<f64>,
    pub bpsn: Option<f64>,
    pub bnsp: Option<f64>,
    pub mentions: usize,
}

/// Subgroup AUC over instances mentioning `group`; BPSN over toxic
/// background plus non-toxic subgroup; BNSP over toxic subgroup plus
/// non-toxic background.
pub fn group_aucs(items: &[BiasItem<'_>], group: &str) -> GroupAucs {
    let pick = |keep: &dyn Fn(bool, bool) -> bool| {
        let (s, l): (Vec<f64>, Vec<bool>) = items
            .iter()
            .filter(|it| keep(it.groups.contains(group), it.toxic))
            .map(|it| (it.score, it.toxic))
            .unzip();
        auroc(&s, &l)
    };
    GroupAucs {
        subgroup: pick(&|in_g, _| in_g),
        bpsn: pick(&|in_g, toxic| toxic != in_g),
        bnsp: pick(&|in_g, toxic| toxic == in_g),
        mentions: items.iter().filter(|it| it.groups.contains(group)).count(),
    }
}

/// Generalized power mean `(mean(x^p))^(1/p)`; `p == 0` is the geometric
/// mean. A zero value with a negative power is an error.
pub fn power_mean(values: &[f64], p: f64) -> Result<Option<f64>> {
    if values.is_empty() {
        return Ok(None);
    }
    let n = values.len() as f64;
    if p == 0.0 {
        if values.iter().any(|&v| v <= 0.0) {
            return Err(Error::Other("geometric mean of a non-positive value".into()));
        }
        return Ok(Some((values.iter().map(|v| v.ln()).sum::<f64>() / n).exp()));
    }
    if p < 0.0 && values.iter().any(|&v| v == 0.0) {
        return Err(Error::Other(format!("power mean with p = {p} of an AUC of 0")));
    }
    let m = values.iter().map(|v| v.powf(p)).sum::<f64>() / n;
    Ok(Some(m.powf(1.0 / p)))
}
