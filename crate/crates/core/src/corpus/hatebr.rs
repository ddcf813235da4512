//! HateBRXplain-shaped tables.
//!
//! Expected header: `id,text,label,annotator_1_span,...,annotator_k_span`
//! with an optional `target_groups` column (`;`-separated tags). Each span
//! cell holds zero or more character intervals written as integer pairs,
//! e.g. `11-17`, `(11,17)` or `0:3;11:17`. An empty cell means that
//! annotator supplied no rationale.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use super::{CharSpan, Dataset, Example};
use crate::{Error, Result};

pub fn load_hatebrxplain(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_hatebrxplain_reader(file)
}

pub fn load_hatebrxplain_reader<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id_col, text_col, label_col) = match (col("id"), col("text"), col("label")) {
        (Some(i), Some(t), Some(l)) => (i, t, l),
        _ => {
            return Err(Error::InvalidDataset(
                "table must have id, text and label columns".into(),
            ))
        }
    };
    let groups_col = col("target_groups");
    let mut span_cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let n = h.trim().strip_prefix("annotator_")?.strip_suffix("_span")?;
            n.parse::<usize>().ok().map(|n| (n, i))
        })
        .collect();
    span_cols.sort_unstable();

    let mut examples = Vec::new();
    for (row_no, row) in rdr.records().enumerate() {
        let row = row?;
        let id = row.get(id_col).unwrap_or("").trim().to_string();
        let row_name = if id.is_empty() {
            format!("row {}", row_no + 1)
        } else {
            id.clone()
        };
        let text = row.get(text_col).unwrap_or("").to_string();
        let label = parse_label(&row_name, row.get(label_col).unwrap_or(""))?;
        let text_len = text.chars().count();

        let mut char_spans = Vec::new();
        for &(_, c) in &span_cols {
            let spans = parse_spans(&row_name, row.get(c).unwrap_or(""))?;
            for &(s, e) in &spans {
                if s >= e || e > text_len {
                    return Err(Error::MalformedRecord {
                        id: row_name.clone(),
                        reason: format!("span ({s},{e}) outside text of {text_len} characters"),
                    });
                }
            }
            if !spans.is_empty() {
                char_spans.push(spans);
            }
        }

        let target_groups = groups_col
            .and_then(|c| row.get(c))
            .map(|cell| {
                cell.split(';')
                    .map(str::trim)
                    .filter(|t| !t.is_empty() && !t.eq_ignore_ascii_case("none"))
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default();

        examples.push(Example {
            id: if id.is_empty() { row_name } else { id },
            words: text.split_whitespace().map(str::to_string).collect(),
            text,
            label,
            annotator_labels: vec![label],
            annotator_word_masks: Vec::new(),
            char_spans,
            target_groups,
        });
    }
    Dataset::new(
        examples,
        2,
        vec!["non-offensive".into(), "offensive".into()],
        BTreeSet::new(),
    )
}

fn parse_label(row: &str, cell: &str) -> Result<usize> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "0" | "non-offensive" | "non_offensive" | "nonoffensive" | "false" => Ok(0),
        "1" | "offensive" | "true" => Ok(1),
        other => Err(Error::MalformedRecord {
            id: row.to_string(),
            reason: format!("unknown label `{other}`"),
        }),
    }
}

fn parse_spans(row: &str, cell: &str) -> Result<Vec<CharSpan>> {
    let nums = cell
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::MalformedRecord {
            id: row.to_string(),
            reason: format!("bad span cell `{cell}`: {e}"),
        })?;
    if nums.len() % 2 != 0 {
        return Err(Error::MalformedRecord {
            id: row.to_string(),
            reason: format!("odd number of offsets in span cell `{cell}`"),
        });
    }
    Ok(nums.chunks(2).map(|p| (p[0], p[1])).collect())
}
