//! End-to-end glue: split, encode, train, evaluate.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_synthetic, Dataset, SplitAssignment, SplitName, SyntheticSpec};
use crate::explain::{content_scores, extract_rationale, to_content_indices, ExtractionStrategy};
use crate::metrics::{faithfulness, InstanceEval, MetricsReport, ReportOptions};
use crate::model::{forward, init_model, ModelConfig, Parameters};
use crate::textproc::{build_vocab, encode, rationale_for, Vocabulary};
use crate::trainer::{train, PreparedExample, RunHistory, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn from_assignment(ds: &Dataset, split: &SplitAssignment) -> Self {
        Self {
            train: ds.subset(split.ids(SplitName::Train)),
            validation: ds.subset(split.ids(SplitName::Validation)),
            test: ds.subset(split.ids(SplitName::Test)),
        }
    }

    /// Generates `train + validation + test` examples from `spec` and cuts
    /// them in order. Examples are drawn independently, so contiguous cuts
    /// are random splits with exact sizes.
    pub fn synthetic(spec: &SyntheticSpec, sizes: [usize; 3]) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        let ds = generate_synthetic(&SyntheticSpec { num_examples: total, ..spec.clone() })?;
        let ids = |from: usize, to: usize| -> BTreeSet<String> {
            ds.examples[from..to].iter().map(|e| e.id.clone()).collect()
        };
        let (a, b) = (sizes[0], sizes[0] + sizes[1]);
        Ok(Self {
            train: ds.subset(&ids(0, a)),
            validation: ds.subset(&ids(a, b)),
            test: ds.subset(&ids(b, total)),
        })
    }
}

pub fn prepare(ds: &Dataset, vocab: &Vocabulary, max_len: usize) -> Vec<PreparedExample> {
    ds.examples
        .iter()
        .map(|ex| {
            let enc = encode(&ex.words, &ex.text, vocab, max_len);
            PreparedExample {
                id: ex.id.clone(),
                words: ex.words.clone(),
                rationale: rationale_for(ex, &enc),
                enc,
                label: ex.label,
                target_groups: ex.target_groups.clone(),
            }
        })
        .collect()
}

/// Encoded splits sharing one vocabulary built from the training split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub num_classes: usize,
    pub train: Vec<PreparedExample>,
    pub validation: Vec<PreparedExample>,
    pub test: Vec<PreparedExample>,
}

impl Prepared {
    pub fn new(splits: &Splits, max_len: usize, min_freq: usize) -> Result<Self> {
        let vocab = build_vocab(&[&splits.train], min_freq)?;
        Ok(Self::with_vocab(splits, vocab, max_len))
    }

    pub fn with_vocab(splits: &Splits, vocab: Vocabulary, max_len: usize) -> Self {
        Self {
            num_classes: splits.train.num_classes,
            train: prepare(&splits.train, &vocab, max_len),
            validation: prepare(&splits.validation, &vocab, max_len),
            test: prepare(&splits.test, &vocab, max_len),
            vocab,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub strategy: ExtractionStrategy,
    pub report: ReportOptions,
    pub faithfulness: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            strategy: ExtractionStrategy::AboveUniform,
            report: ReportOptions::default(),
            faithfulness: true,
        }
    }
}

/// Scores one example: prediction, supervised attention, rationale and
/// (optionally) faithfulness.
pub fn evaluate_one(params: &Parameters, ex: &PreparedExample, opts: &EvalOptions) -> Result<InstanceEval> {
    let out = forward(params, &ex.enc, None)?;
    let pred_label = crate::model::argmax(&out.probabilities);
    let picked = extract_rationale(&out.cls_attention, &ex.enc, opts.strategy);
    let faith = if opts.faithfulness {
        Some(faithfulness(params, &ex.enc, &out.probabilities, &picked)?)
    } else {
        None
    };
    let gold_positions: BTreeSet<usize> = ex.rationale.positions().into_iter().collect();
    Ok(InstanceEval {
        id: ex.id.clone(),
        gold_label: ex.label,
        pred_label,
        attention: content_scores(&out.cls_attention, &ex.enc),
        gold_rationale: to_content_indices(&gold_positions, &ex.enc),
        pred_rationale: to_content_indices(&picked, &ex.enc),
        probabilities: out.probabilities,
        target_groups: ex.target_groups.clone(),
        faithfulness: faith,
    })
}

/// Evaluates in parallel; results keep the input order.
pub fn evaluate(params: &Parameters, examples: &[PreparedExample], opts: &EvalOptions) -> Result<Vec<InstanceEval>> {
    examples.par_iter().map(|ex| evaluate_one(params, ex, opts)).collect()
}

/// One training run and its test evaluation.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub params: Parameters,
    pub history: RunHistory,
    pub evals: Vec<InstanceEval>,
    pub report: MetricsReport,
}

/// A model shape plus training and evaluation settings. The vocabulary
/// size, class count, sequence length and seeds of `model` are filled in
/// per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl Experiment {
    pub fn model_for(&self, data: &Prepared, seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size: data.vocab.len(),
            num_classes: data.num_classes,
            max_len: self.train.max_len,
            init_seed: seed,
            ..self.model.clone()
        }
    }

    pub fn run_seed(&self, data: &Prepared, seed: u64) -> Result<SeedRun> {
        let cfg = self.model_for(data, seed);
        let params = init_model(&cfg)?;
        let tcfg = TrainConfig { seed, ..self.train.clone() };
        let (best, history) = train(params, &data.train, &data.validation, &tcfg)?;
        if data.test.is_empty() {
            return Err(Error::InvalidTrainConfig("empty test split".into()));
        }
        let evals = evaluate(&best, &data.test, &self.eval)?;
        let report = MetricsReport::compute(&evals, data.num_classes, &self.eval.report)?;
        Ok(SeedRun { seed, params: best, history, evals, report })
    }
}
