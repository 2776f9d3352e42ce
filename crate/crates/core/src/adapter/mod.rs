//! Backbone adapters: the boundary between the campaign machinery and a
//! concrete model.
//!
//! An adapter owns one model instance. The trainer drives it through
//! `initialize`, then one `train_epoch` call per epoch, evaluating with
//! `predict` after each. Adapters must be deterministic: the same
//! [`RunConfig`] and training bytes give the same epochs and predictions.

mod optim;
mod stub;
mod tiny;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Example, Label, LabeledDataset};
use crate::runspec::{BackboneId, RunConfig};

pub use optim::{AdamW, WarmupCosine};
pub use stub::{ConstantAdapter, EpochScript, Script, ScriptedAdapter};
pub use tiny::{tokenize, HashedLogisticAdapter, FAMILY as TINY_FAMILY};

/// Scores at or above this value become label 1.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{adapter}: {message}")]
pub struct AdapterError {
    pub adapter: String,
    pub message: String,
}

impl AdapterError {
    pub fn new(adapter: impl Into<String>, message: impl Into<String>) -> Self {
        AdapterError {
            adapter: adapter.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_mixed_precision: bool,
    /// Longest input, in adapter tokens; longer inputs are truncated.
    pub max_sequence_length: usize,
}

/// What an adapter returns for a batch of examples.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Labels(Vec<Label>),
    /// Positive-class scores in [0, 1].
    Scores(Vec<f64>),
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Labels(l) => l.len(),
            Predictions::Scores(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_labels(self) -> Vec<Label> {
        match self {
            Predictions::Labels(l) => l,
            Predictions::Scores(s) => s.into_iter().map(|p| Label::from(p >= DECISION_THRESHOLD)).collect(),
        }
    }
}

pub trait BackboneAdapter: Send {
    /// Short adapter name, used in diagnostics and run metadata.
    fn name(&self) -> &str;

    fn version(&self) -> String;

    fn capabilities(&self) -> Capabilities;

    fn resolves(&self, _backbone: &BackboneId) -> bool {
        true
    }

    /// Start a fresh model for `config`, training on `train`.
    fn initialize(&mut self, config: &RunConfig, train: &LabeledDataset) -> Result<(), AdapterError>;

    /// Train one epoch; `epoch` is 1-based.
    fn train_epoch(&mut self, epoch: usize) -> Result<(), AdapterError>;

    /// One prediction per example, in input order.
    fn predict(&self, examples: &[Example]) -> Result<Predictions, AdapterError>;

    fn save_checkpoint(&self, dir: &Path) -> Result<(), AdapterError>;

    fn load_checkpoint(&mut self, dir: &Path, config: &RunConfig) -> Result<(), AdapterError>;

    /// Adapter-chosen settings recorded in run metadata (evaluation batch
    /// size, data order, defaults the run config does not pin).
    fn settings(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

impl<A: BackboneAdapter + ?Sized> BackboneAdapter for Box<A> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn version(&self) -> String {
        (**self).version()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn resolves(&self, backbone: &BackboneId) -> bool {
        (**self).resolves(backbone)
    }
    fn initialize(&mut self, config: &RunConfig, train: &LabeledDataset) -> Result<(), AdapterError> {
        (**self).initialize(config, train)
    }
    fn train_epoch(&mut self, epoch: usize) -> Result<(), AdapterError> {
        (**self).train_epoch(epoch)
    }
    fn predict(&self, examples: &[Example]) -> Result<Predictions, AdapterError> {
        (**self).predict(examples)
    }
    fn save_checkpoint(&self, dir: &Path) -> Result<(), AdapterError> {
        (**self).save_checkpoint(dir)
    }
    fn load_checkpoint(&mut self, dir: &Path, config: &RunConfig) -> Result<(), AdapterError> {
        (**self).load_checkpoint(dir, config)
    }
    fn settings(&self) -> serde_json::Value {
        (**self).settings()
    }
}
