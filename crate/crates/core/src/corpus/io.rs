//! Canonical dataset files: a header line followed by one JSON example per
//! line, plus JSON split files.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Example, SplitAssignment};
use crate::{Error, Result};

pub const FORMAT: &str = "sra-dataset/1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    num_classes: usize,
    label_names: Vec<String>,
    group_vocabulary: BTreeSet<String>,
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        num_classes: ds.num_classes,
        label_names: ds.label_names.clone(),
        group_vocabulary: ds.group_vocabulary.clone(),
    };
    let io = |e| Error::io("<dataset stream>", e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for ex in &ds.examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset_from<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines();
    let io = |e| Error::io("<dataset stream>", e);
    let header: Header = match lines.next() {
        Some(line) => serde_json::from_str(&line.map_err(io)?)?,
        None => return Err(Error::InvalidDataset("empty dataset file".into())),
    };
    if header.format != FORMAT {
        return Err(Error::InvalidDataset(format!("unknown format {}", header.format)));
    }
    let mut examples = Vec::new();
    for line in lines {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        examples.push(serde_json::from_str::<Example>(&line)?);
    }
    Dataset::new(examples, header.num_classes, header.label_names, header.group_vocabulary)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(ds, BufWriter::new(f))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from(BufReader::new(f))
}

pub fn write_split(split: &SplitAssignment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(split)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_split(path: impl AsRef<Path>) -> Result<SplitAssignment> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&raw)?)
}

/// SHA-256 over the canonical serialization.
pub fn fingerprint(ds: &Dataset) -> String {
    let mut buf = Vec::new();
    write_dataset_to(ds, &mut buf).expect("in-memory write");
    hex::encode(Sha256::digest(&buf))
}
