//! Attention-supervised transformer text classification.
//!
//! A small from-scratch transformer encoder whose `[CLS]` attention can be
//! trained toward human rationale masks, together with the evaluation battery
//! used to judge such models: classification quality, rationale plausibility,
//! faithfulness probes and identity-group bias AUCs.
//!
//! Layout:
//! - [`corpus`]: dataset types, loaders, stratified splits and the synthetic
//!   planted-rationale generator.
//! - [`textproc`]: vocabulary, encodings with character offsets, rationale masks.
//! - [`model`]: the encoder, its hand-written reverse pass and checkpoints.
//! - [`objective`]: cross-entropy, attention alignment loss, gradient checking.
//! - [`trainer`]: AdamW, the training loop and multi-seed aggregation.
//! - [`metrics`]: every evaluation family and the report type.
//! - [`explain`]: rationale extraction from attention and heatmap rendering.
//! - [`pipeline`]: glue that turns datasets and checkpoints into reports.

pub mod corpus;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod rng;
pub mod textproc;
pub mod trainer;

pub use error::{Error, Result};
