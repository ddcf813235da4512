//! Self-describing JSON checkpoints. Floats are written with shortest
//! round-trip formatting, so a reload is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Parameters, Tensors};
use crate::{Error, Result};

pub const FORMAT: &str = "sra-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub seed: u64,
    pub alpha: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    len: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct File {
    format: String,
    config: ModelConfig,
    manifest: CheckpointManifest,
    tensors: Vec<NamedTensor>,
}

pub fn to_json(params: &Parameters, manifest: &CheckpointManifest) -> Result<String> {
    let tensors = Tensors::names(params.config.n_layers)
        .into_iter()
        .zip(params.tensors.slices())
        .map(|(name, data)| NamedTensor {
            name,
            len: data.len(),
            data: data.to_vec(),
        })
        .collect();
    let file = File {
        format: FORMAT.into(),
        config: params.config.clone(),
        manifest: manifest.clone(),
        tensors,
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn from_json(raw: &str) -> Result<(Parameters, CheckpointManifest)> {
    let file: File = serde_json::from_str(raw)?;
    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {}", file.format)));
    }
    file.config.validate()?;
    let mut tensors = Tensors::zeros(&file.config);
    let names = Tensors::names(file.config.n_layers);
    if file.tensors.len() != names.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors stored, {} expected",
            file.tensors.len(),
            names.len()
        )));
    }
    for ((slot, stored), name) in tensors.slices_mut().into_iter().zip(&file.tensors).zip(&names) {
        if &stored.name != name || stored.data.len() != slot.len() || stored.len != slot.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} (len {}) does not match expected {} (len {})",
                stored.name,
                stored.data.len(),
                name,
                slot.len()
            )));
        }
        slot.copy_from_slice(&stored.data);
    }
    if !tensors.all_finite() {
        return Err(Error::NonFinite("checkpoint tensors".into()));
    }
    Ok((
        Parameters {
            config: file.config,
            tensors,
        },
        file.manifest,
    ))
}

pub fn save(params: &Parameters, manifest: &CheckpointManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(params, manifest)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Parameters, CheckpointManifest)> {
    let path = path.as_ref();
    from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
