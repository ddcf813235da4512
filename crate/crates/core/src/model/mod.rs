//! A small pre-norm transformer encoder with a `[CLS]` classification head.
//!
//! Every attention matrix is exposed on the forward output, and one chosen
//! `[CLS]` attention row (a single head, or the mean over heads, of one
//! layer) is differentiable end to end so that an alignment loss on it
//! reaches the query and key projections.
//!
//! Only the non-padding prefix of an encoding is computed. Padding keys are
//! masked out of every softmax, so padding positions can never influence a
//! valid position and their rows are not materialized.

mod backward;
pub mod checkpoint;
mod forward;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use backward::{backward, OutputGrad};
pub use forward::{argmax, forward, forward_recorded, predict, ForwardOutput};
pub use params::{init_model, Gradients, LayerParams, Parameters, Tensors};

/// Which head of the supervised layer feeds the `[CLS]` attention vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSelection {
    Head(usize),
    Mean,
}

impl fmt::Display for HeadSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadSelection::Head(h) => write!(f, "{h}"),
            HeadSelection::Mean => f.write_str("mean"),
        }
    }
}

impl FromStr for HeadSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" | "avg" => Ok(HeadSelection::Mean),
            other => other
                .parse()
                .map(HeadSelection::Head)
                .map_err(|_| Error::InvalidConfig(format!("bad head selection `{s}`"))),
        }
    }
}

impl Serialize for HeadSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HeadSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(HeadSelection::Head(n)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub supervision_layer: usize,
    pub supervision_head: HeadSelection,
    pub init_seed: u64,
}

impl ModelConfig {
    /// d_model 64, 2 layers, 4 heads, d_ff 128, max_len 64, dropout 0.1,
    /// supervising head 0 of the last layer.
    pub fn desk(vocab_size: usize, num_classes: usize) -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            vocab_size,
            max_len: 64,
            num_classes,
            dropout: 0.1,
            supervision_layer: 1,
            supervision_head: HeadSelection::Head(0),
            init_seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.supervision_layer >= self.n_layers {
            return bad(format!(
                "supervision layer {} >= n_layers {}",
                self.supervision_layer, self.n_layers
            ));
        }
        if let HeadSelection::Head(h) = self.supervision_head {
            if h >= self.n_heads {
                return bad(format!("supervision head {h} >= n_heads {}", self.n_heads));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.max_len < 3 {
            return bad(format!("max_len {} < 3", self.max_len));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        if self.vocab_size < 4 {
            return bad(format!("vocab_size {} cannot hold the special tokens", self.vocab_size));
        }
        Ok(())
    }
}
