//! Dataset and split resolution shared by the subcommands.

use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sra_core::corpus::{self, io::fingerprint, Dataset, SplitAssignment};

use crate::Format;

pub fn load(path: &Path, format: Format) -> Result<Dataset> {
    let format = match format {
        Format::Auto => detect(path)?,
        f => f,
    };
    let ds = match format {
        Format::Hatebr => corpus::load_hatebrxplain(path)?,
        Format::Hatexplain => corpus::load_hatexplain(path)?,
        Format::Native => corpus::io::read_dataset(path)?,
        Format::Auto => unreachable!(),
    };
    Ok(ds)
}

fn detect(path: &Path) -> Result<Format> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return Ok(Format::Hatebr);
    }
    let file = std::fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .with_context(|| format!("reading {}", path.display()))?;
    let native = serde_json::from_str::<serde_json::Value>(&first)
        .ok()
        .and_then(|v| v.get("format").and_then(|f| f.as_str().map(|f| f == corpus::io::FORMAT)))
        .unwrap_or(false);
    Ok(if native { Format::Native } else { Format::Hatexplain })
}

pub fn split(ds: &Dataset, file: Option<&Path>, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    match file {
        Some(p) => Ok(corpus::io::read_split(p)?),
        None => Ok(corpus::stratified_split(ds, ratios, seed)?),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetRecord {
    pub path: String,
    pub sha256: String,
    pub examples: usize,
}

pub fn record(path: &Path, ds: &Dataset) -> DatasetRecord {
    DatasetRecord { path: path.display().to_string(), sha256: fingerprint(ds), examples: ds.len() }
}
