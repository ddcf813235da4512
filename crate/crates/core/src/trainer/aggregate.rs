//! Per-seed runs folded into mean and sample standard deviation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::MetricsReport;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    /// `None` when the run failed; `error` then says why.
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation (n - 1); `None` with fewer than two values.
    pub std: Option<f64>,
    /// Seeds that produced a value for this metric.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<SeedRow>,
    pub summary: BTreeMap<String, MetricSummary>,
    /// True when at least one seed failed.
    pub partial: bool,
}

pub fn summarize(values: &[f64]) -> Option<MetricSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Some(MetricSummary { mean, std, n })
}

/// Runs `run` once per seed, in order. A failing seed is recorded and the
/// remaining seeds still run; an error is returned only if every seed fails.
pub fn multi_seed_run<F>(seeds: &[u64], mut run: F) -> Result<AggregateReport>
where
    F: FnMut(u64) -> Result<MetricsReport>,
{
    if seeds.len() < 2 {
        return Err(Error::InvalidTrainConfig(format!(
            "multi-seed runs need at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        rows.push(match run(seed) {
            Ok(report) => SeedRow { seed, report: Some(report), error: None },
            Err(e) => SeedRow { seed, report: None, error: Some(e.to_string()) },
        });
    }
    if rows.iter().all(|r| r.report.is_none()) {
        let msgs: Vec<String> = rows
            .iter()
            .map(|r| format!("seed {}: {}", r.seed, r.error.as_deref().unwrap_or("?")))
            .collect();
        return Err(Error::Other(format!("all seeds failed: {}", msgs.join("; "))));
    }
    Ok(aggregate(seeds, rows))
}

pub fn aggregate(seeds: &[u64], rows: Vec<SeedRow>) -> AggregateReport {
    let mut pooled: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for report in rows.iter().filter_map(|r| r.report.as_ref()) {
        for (name, value) in report.scalars() {
            let slot = pooled.entry(name.to_string()).or_default();
            if let Some(v) = value {
                slot.push(v);
            }
        }
    }
    let summary = pooled
        .into_iter()
        .filter_map(|(k, v)| summarize(&v).map(|s| (k, s)))
        .collect();
    AggregateReport {
        seeds: seeds.to_vec(),
        partial: rows.iter().any(|r| r.report.is_none()),
        rows,
        summary,
    }
}
