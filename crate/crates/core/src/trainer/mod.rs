//! Mini-batch training with best-validation checkpoint selection, plus
//! multi-seed aggregation of evaluation reports.

mod aggregate;
mod optim;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics;
use crate::model::{self, Gradients, Parameters};
use crate::objective::{self, LossBreakdown};
use crate::rng::{self, Stream};
use crate::textproc::{Encoding, RationaleMask};
use crate::{Error, Result};

pub use aggregate::{multi_seed_run, AggregateReport, MetricSummary, SeedRow};
pub use optim::{AdamW, AdamWParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub profile: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_len: usize,
    pub alpha: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// When false the alignment term is never computed, regardless of alpha.
    pub supervise_attention: bool,
    /// Stop after this many optimizer steps (used for trajectory checks).
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl TrainConfig {
    pub fn profile(name: &str) -> Result<Self> {
        let base = Self {
            profile: name.to_string(),
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 5,
            max_len: 64,
            alpha: 10.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            seed: 1,
            supervise_attention: true,
            max_steps: None,
        };
        match name {
            "desk" => Ok(base),
            "paper-en" => Ok(Self {
                learning_rate: 2e-5,
                batch_size: 16,
                max_len: 128,
                ..base
            }),
            "paper-pt" => Ok(Self {
                learning_rate: 1e-5,
                batch_size: 8,
                max_len: 512,
                ..base
            }),
            other => Err(Error::InvalidTrainConfig(format!("unknown profile `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrainConfig(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha {} must be >= 0", self.alpha));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// A model-ready example: encoding, label and token-level rationale target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedExample {
    pub id: String,
    pub words: Vec<String>,
    pub enc: Encoding,
    pub label: usize,
    pub rationale: RationaleMask,
    pub target_groups: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_ce: f64,
    pub train_aal: f64,
    pub train_total: f64,
    pub gated_examples: usize,
    pub val_macro_f1: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    /// Mean total loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// 1-based index into `epochs`.
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
}

/// Predicted labels for a set of examples; forwards fan out across threads
/// and results come back in input order.
pub fn predict_labels(params: &Parameters, examples: &[PreparedExample]) -> Result<Vec<usize>> {
    examples
        .par_iter()
        .map(|ex| model::predict(params, &ex.enc).map(|(l, _)| l))
        .collect()
}

pub fn validation_scores(params: &Parameters, val: &[PreparedExample]) -> Result<(f64, f64)> {
    let pred = predict_labels(params, val)?;
    let gold: Vec<usize> = val.iter().map(|e| e.label).collect();
    Ok((
        metrics::macro_f1_labels(&gold, &pred, params.config.num_classes),
        metrics::accuracy_labels(&gold, &pred),
    ))
}

/// Trains for `tcfg.epochs` epochs and returns the parameters of the epoch
/// with the best validation macro F1 (earliest on ties).
pub fn train(
    mut params: Parameters,
    train_set: &[PreparedExample],
    val_set: &[PreparedExample],
    tcfg: &TrainConfig,
) -> Result<(Parameters, RunHistory)> {
    tcfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidTrainConfig("empty training split".into()));
    }
    let mut shuffle_rng = rng::stream(tcfg.seed, Stream::Shuffle);
    let mut dropout_rng = rng::stream(tcfg.seed, Stream::Dropout);
    let mut opt = AdamW::new(&params.config);
    let hp = tcfg.adamw();
    let mut grads = Gradients::zeros(&params.config);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = RunHistory {
        epochs: Vec::new(),
        step_losses: Vec::new(),
        best_epoch: 0,
        best_val_macro_f1: f64::NEG_INFINITY,
    };
    let mut best = params.clone();
    let mut steps = 0usize;

    'epochs: for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = LossBreakdown { ce: 0.0, aal: 0.0, gate: false, alpha: tcfg.alpha, total: 0.0 };
        let mut seen = 0usize;
        let mut gated = 0usize;
        let mut epoch_steps = 0usize;
        for (batch_no, batch) in order.chunks(tcfg.batch_size).enumerate() {
            grads.tensors.fill_zero();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_total = 0.0;
            for &i in batch {
                let ex = &train_set[i];
                let loss = objective::example_loss_and_grad(
                    &params,
                    &ex.enc,
                    ex.label,
                    &ex.rationale,
                    tcfg.alpha,
                    tcfg.supervise_attention,
                    Some(&mut dropout_rng),
                    scale,
                    &mut grads,
                )
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch, batch: batch_no },
                    other => other,
                })?;
                sums.ce += loss.ce;
                sums.aal += loss.aal;
                sums.total += loss.total;
                gated += loss.gate as usize;
                batch_total += loss.total;
                seen += 1;
            }
            let batch_mean = batch_total * scale;
            if !batch_mean.is_finite() || !grads.tensors.all_finite() {
                return Err(Error::Diverged { epoch, batch: batch_no });
            }
            if let Some(clip) = tcfg.clip_norm {
                let norm = grads.tensors.l2_norm();
                if norm > clip {
                    grads.tensors.scale(clip / norm);
                }
            }
            opt.step(&mut params, &grads, &hp);
            history.step_losses.push(batch_mean);
            steps += 1;
            epoch_steps += 1;
            if tcfg.max_steps.is_some_and(|m| steps >= m) {
                history.epochs.push(close_epoch(&params, val_set, epoch, epoch_steps, &sums, seen, gated)?);
                update_best(&mut history, &mut best, &params);
                break 'epochs;
            }
        }
        history.epochs.push(close_epoch(&params, val_set, epoch, epoch_steps, &sums, seen, gated)?);
        update_best(&mut history, &mut best, &params);
    }
    Ok((best, history))
}

fn close_epoch(
    params: &Parameters,
    val_set: &[PreparedExample],
    epoch: usize,
    steps: usize,
    sums: &LossBreakdown,
    seen: usize,
    gated: usize,
) -> Result<EpochRecord> {
    let (val_macro_f1, val_accuracy) = if val_set.is_empty() {
        (0.0, 0.0)
    } else {
        validation_scores(params, val_set)?
    };
    let n = seen.max(1) as f64;
    Ok(EpochRecord {
        epoch,
        steps,
        train_ce: sums.ce / n,
        train_aal: sums.aal / n,
        train_total: sums.total / n,
        gated_examples: gated,
        val_macro_f1,
        val_accuracy,
    })
}

fn update_best(history: &mut RunHistory, best: &mut Parameters, params: &Parameters) {
    let last = history.epochs.last().expect("epoch just recorded");
    if last.val_macro_f1 > history.best_val_macro_f1 {
        history.best_val_macro_f1 = last.val_macro_f1;
        history.best_epoch = last.epoch;
        *best = params.clone();
    }
}
