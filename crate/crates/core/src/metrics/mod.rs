//! Evaluation metrics and the aggregate report.
//!
//! Everything here works from [`InstanceEval`] records, so a report can be
//! recomputed offline from a saved predictions file. Faithfulness needs the
//! model and is attached per instance by the pipeline when available.

mod bias;
mod classification;
mod faithfulness;
mod plausibility;
mod ranking;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use bias::{group_aucs, power_mean, BiasItem, GroupAucs};
pub use classification::{accuracy_labels, confusion, macro_f1_labels, per_class_f1};
pub use faithfulness::{faithfulness, Faithfulness};
pub use plausibility::{auprc, iou, iou_f1, token_prf, AuprcMode, TokenPrf};
pub use ranking::{auroc, average_precision};

/// One evaluated instance. Token sets and `attention` are indexed by content
/// token (0-based over the real words of the encoding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEval {
    pub id: String,
    pub gold_label: usize,
    pub pred_label: usize,
    pub probabilities: Vec<f64>,
    /// Supervised attention renormalized over content tokens.
    pub attention: Vec<f64>,
    pub gold_rationale: BTreeSet<usize>,
    pub pred_rationale: BTreeSet<usize>,
    #[serde(default)]
    pub target_groups: BTreeSet<String>,
    #[serde(default)]
    pub faithfulness: Option<Faithfulness>,
}

impl InstanceEval {
    /// Probability mass on every class above 0.
    pub fn toxicity(&self) -> f64 {
        self.probabilities.iter().skip(1).sum()
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::MalformedRecord { id: self.id.clone(), reason })
        };
        if self.probabilities.len() != num_classes {
            return bad(format!(
                "{} probabilities for {num_classes} classes",
                self.probabilities.len()
            ));
        }
        if self.gold_label >= num_classes || self.pred_label >= num_classes {
            return bad("label out of range".into());
        }
        let n = self.attention.len();
        if self.gold_rationale.iter().chain(&self.pred_rationale).any(|&i| i >= n) {
            return bad(format!("rationale index beyond {n} content tokens"));
        }
        Ok(())
    }
}

/// Which instances the plausibility metrics look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlausibilityScope {
    /// Only instances carrying a nonempty gold rationale.
    #[default]
    GoldRationale,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub iou_threshold: f64,
    pub gmb_power: f64,
    pub auprc_mode: AuprcMode,
    pub scope: PlausibilityScope,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            gmb_power: -5.0,
            auprc_mode: AuprcMode::PerInstance,
            scope: PlausibilityScope::GoldRationale,
        }
    }
}

/// Aggregate scores. Optional fields are `null` when undefined on the data
/// (a single-class AUROC, no rationale-bearing instances, no groups, or
/// faithfulness not computed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_instances: usize,
    pub num_classes: usize,
    pub class_counts: Vec<usize>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub auroc: Option<f64>,
    pub rationale_instances: usize,
    pub iou_f1: f64,
    pub token_precision: f64,
    pub token_recall: f64,
    pub token_f1: f64,
    pub auprc: Option<f64>,
    pub attention_rationale_correlation: Option<f64>,
    pub comprehensiveness: Option<f64>,
    pub sufficiency: Option<f64>,
    pub gmb_subgroup: Option<f64>,
    pub gmb_bpsn: Option<f64>,
    pub gmb_bnsp: Option<f64>,
    pub groups: BTreeMap<String, GroupAucs>,
    pub options: ReportOptions,
}

impl MetricsReport {
    /// A report over zero instances.
    pub fn empty(num_classes: usize) -> Self {
        Self::compute(&[], num_classes, &ReportOptions::default()).expect("empty report")
    }

    pub fn compute(evals: &[InstanceEval], num_classes: usize, opts: &ReportOptions) -> Result<Self> {
        for e in evals {
            e.validate(num_classes)?;
        }
        let gold: Vec<usize> = evals.iter().map(|e| e.gold_label).collect();
        let pred: Vec<usize> = evals.iter().map(|e| e.pred_label).collect();
        let mut class_counts = vec![0; num_classes];
        gold.iter().for_each(|&g| class_counts[g] += 1);

        let in_scope: Vec<&InstanceEval> = evals
            .iter()
            .filter(|e| opts.scope == PlausibilityScope::All || !e.gold_rationale.is_empty())
            .collect();
        let pairs = || in_scope.iter().map(|e| (&e.pred_rationale, &e.gold_rationale));
        let prf = token_prf(pairs());

        let faith: Vec<Faithfulness> = evals.iter().filter_map(|e| e.faithfulness).collect();
        let faith_mean = |f: fn(&Faithfulness) -> f64| {
            (!faith.is_empty()).then(|| faith.iter().map(f).sum::<f64>() / faith.len() as f64)
        };

        let (groups, gmb) = bias_section(evals, opts.gmb_power);

        Ok(Self {
            num_instances: evals.len(),
            num_classes,
            class_counts,
            accuracy: accuracy_labels(&gold, &pred),
            macro_f1: macro_f1_labels(&gold, &pred, num_classes),
            per_class_f1: per_class_f1(&gold, &pred, num_classes),
            auroc: macro_auroc(evals, num_classes),
            rationale_instances: evals.iter().filter(|e| !e.gold_rationale.is_empty()).count(),
            iou_f1: iou_f1(pairs(), opts.iou_threshold),
            token_precision: prf.precision,
            token_recall: prf.recall,
            token_f1: prf.f1,
            auprc: auprc(
                in_scope.iter().map(|e| (&e.attention[..], &e.gold_rationale)),
                opts.auprc_mode,
            ),
            attention_rationale_correlation: crate::explain::attention_rationale_correlation(
                evals.iter().map(|e| (&e.attention[..], &e.gold_rationale)),
            ),
            comprehensiveness: faith_mean(|f| f.comprehensiveness),
            sufficiency: faith_mean(|f| f.sufficiency),
            gmb_subgroup: gmb[0],
            gmb_bpsn: gmb[1],
            gmb_bnsp: gmb[2],
            groups,
            options: *opts,
        })
    }

    /// Every scalar metric by its report key, in a fixed order.
    pub fn scalars(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("accuracy", Some(self.accuracy)),
            ("macro_f1", Some(self.macro_f1)),
            ("auroc", self.auroc),
            ("iou_f1", Some(self.iou_f1)),
            ("token_precision", Some(self.token_precision)),
            ("token_recall", Some(self.token_recall)),
            ("token_f1", Some(self.token_f1)),
            ("auprc", self.auprc),
            ("attention_rationale_correlation", self.attention_rationale_correlation),
            ("comprehensiveness", self.comprehensiveness),
            ("sufficiency", self.sufficiency),
            ("gmb_subgroup", self.gmb_subgroup),
            ("gmb_bpsn", self.gmb_bpsn),
            ("gmb_bnsp", self.gmb_bnsp),
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Macro average of one-vs-rest AUROCs over classes where it is defined.
pub fn macro_auroc(evals: &[InstanceEval], num_classes: usize) -> Option<f64> {
    let per: Vec<f64> = (0..num_classes)
        .filter_map(|c| {
            let s: Vec<f64> = evals.iter().map(|e| e.probabilities[c]).collect();
            let l: Vec<bool> = evals.iter().map(|e| e.gold_label == c).collect();
            auroc(&s, &l)
        })
        .collect();
    (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
}

type BiasSection = (BTreeMap<String, GroupAucs>, [Option<f64>; 3]);

/// Per-group AUCs and their generalized means. A mean that hits the pole
/// (an AUC of 0 under a negative power) is reported as absent.
fn bias_section(evals: &[InstanceEval], power: f64) -> BiasSection {
    let items: Vec<BiasItem<'_>> = evals
        .iter()
        .map(|e| BiasItem { toxic: e.gold_label > 0, score: e.toxicity(), groups: &e.target_groups })
        .collect();
    let names: BTreeSet<&String> = evals.iter().flat_map(|e| &e.target_groups).collect();
    let groups: BTreeMap<String, GroupAucs> =
        names.into_iter().map(|g| (g.clone(), group_aucs(&items, g))).collect();
    let mean = |f: fn(&GroupAucs) -> Option<f64>| {
        let v: Vec<f64> = groups.values().filter_map(f).collect();
        power_mean(&v, power).ok().flatten()
    };
    let gmb = [mean(|g| g.subgroup), mean(|g| g.bpsn), mean(|g| g.bnsp)];
    (groups, gmb)
}

/// One JSON object per line.
pub fn write_instance_evals(evals: &[InstanceEval], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for e in evals {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_instance_evals(path: impl AsRef<Path>) -> Result<Vec<InstanceEval>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: InstanceEval = serde_json::from_str(&line).map_err(|err| Error::MalformedRecord {
            id: format!("line {}", n + 1),
            reason: err.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}
