use std::collections::BTreeSet;
use std::path::Path;

use serde_json::Value;

use super::{majority_label, Dataset, Example};
use crate::{Error, Result};

const NUM_CLASSES: usize = 3;
const LABEL_NAMES: [&str; NUM_CLASSES] = ["normal", "offensive", "hatespeech"];

/// Loads a HateXplain-shaped JSON file: an object mapping post id to
/// `{post_tokens, annotators: [{label, target}], rationales}`.
pub fn load_hatexplain(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_hatexplain_str(&raw)
}

pub fn load_hatexplain_str(raw: &str) -> Result<Dataset> {
    let root: Value = serde_json::from_str(raw)?;
    let records = root.as_object().ok_or_else(|| {
        Error::InvalidDataset("expected an object mapping post id to record".into())
    })?;
    let examples = records
        .iter()
        .map(|(id, rec)| parse_record(id, rec))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        examples,
        NUM_CLASSES,
        LABEL_NAMES.iter().map(|s| s.to_string()).collect(),
        BTreeSet::new(),
    )
}

fn missing(id: &str, field: &str) -> Error {
    Error::MalformedRecord {
        id: id.to_string(),
        reason: format!("missing or malformed field `{field}`"),
    }
}

fn parse_label(id: &str, v: &Value) -> Result<usize> {
    let label = match v {
        Value::Number(n) => n.as_u64().map(|n| n as usize),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "0" => Some(0),
            "offensive" | "1" => Some(1),
            "hatespeech" | "hate speech" | "hate" | "2" => Some(2),
            _ => None,
        },
        _ => None,
    };
    match label {
        Some(l) if l < NUM_CLASSES => Ok(l),
        _ => Err(Error::MalformedRecord {
            id: id.to_string(),
            reason: format!("unrecognised annotator label {v}"),
        }),
    }
}

fn parse_record(id: &str, rec: &Value) -> Result<Example> {
    let words: Vec<String> = rec
        .get("post_tokens")
        .and_then(Value::as_array)
        .ok_or_else(|| missing(id, "post_tokens"))?
        .iter()
        .map(|t| t.as_str().map(str::to_string))
        .collect::<Option<_>>()
        .ok_or_else(|| missing(id, "post_tokens"))?;

    let annotators = rec
        .get("annotators")
        .and_then(Value::as_array)
        .filter(|a| !a.is_empty())
        .ok_or_else(|| missing(id, "annotators"))?;

    let mut annotator_labels = Vec::with_capacity(annotators.len());
    let mut target_groups = BTreeSet::new();
    for ann in annotators {
        let label = ann.get("label").ok_or_else(|| missing(id, "annotators.label"))?;
        annotator_labels.push(parse_label(id, label)?);
        if let Some(targets) = ann.get("target").and_then(Value::as_array) {
            for t in targets.iter().filter_map(Value::as_str) {
                if !t.eq_ignore_ascii_case("none") {
                    target_groups.insert(t.to_string());
                }
            }
        }
    }

    let rationales = rec
        .get("rationales")
        .and_then(Value::as_array)
        .ok_or_else(|| missing(id, "rationales"))?;
    let mut annotator_word_masks = Vec::with_capacity(rationales.len());
    for r in rationales {
        let mask: Vec<u8> = r
            .as_array()
            .ok_or_else(|| missing(id, "rationales"))?
            .iter()
            .map(|v| match v.as_u64() {
                Some(b @ (0 | 1)) => Ok(b as u8),
                _ => Err(Error::MalformedRecord {
                    id: id.to_string(),
                    reason: format!("non-binary rationale entry {v}"),
                }),
            })
            .collect::<Result<_>>()?;
        if mask.len() != words.len() {
            return Err(Error::MalformedRecord {
                id: id.to_string(),
                reason: format!(
                    "rationale length {} != post_tokens length {}",
                    mask.len(),
                    words.len()
                ),
            });
        }
        annotator_word_masks.push(mask);
    }

    let label = majority_label(&annotator_labels, NUM_CLASSES).expect("annotators non-empty");
    Ok(Example {
        id: id.to_string(),
        text: String::new(),
        words,
        label,
        annotator_labels,
        annotator_word_masks,
        char_spans: Vec::new(),
        target_groups,
    })
}
