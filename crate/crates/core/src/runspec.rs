//! Run configuration: which backbone, which hyperparameter triple, and the
//! fixed training regime shared by every iteration of a campaign.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RunSpecError {
    #[error("no default hyperparameters registered for backbone `{0}`")]
    UnknownBackbone(String),
    #[error("seed {0} appears more than once")]
    DuplicateSeed(i64),
    #[error("seed list is empty")]
    NoSeeds,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("invalid backbone: {0}")]
    InvalidBackbone(String),
}

/// Seeds used when a campaign does not name its own.
pub const DEFAULT_SEEDS: [i64; 3] = [1, 2, 3];

/// Share of total optimizer steps spent in linear warmup.
pub const WARMUP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneId {
    pub name: String,
    #[serde(default)]
    pub family: String,
}

impl BackboneId {
    pub fn new(name: impl Into<String>, family: impl Into<String>) -> Self {
        BackboneId {
            name: name.into(),
            family: family.into(),
        }
    }

    pub fn validate(&self) -> Result<(), RunSpecError> {
        if self.name.trim().is_empty() {
            return Err(RunSpecError::InvalidBackbone("name is empty".into()));
        }
        Ok(())
    }

    /// Filesystem-safe form of the name, used in run ids.
    pub fn slug(&self) -> String {
        let s: String = self
            .name
            .rsplit('/')
            .next()
            .unwrap_or(&self.name)
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_lowercase()
                } else {
                    '-'
                }
            })
            .collect();
        let s = s.trim_matches('-').to_string();
        if s.is_empty() {
            "backbone".into()
        } else {
            s
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Hyperparameters {
    pub fn new(learning_rate: f64, weight_decay: f64, batch_size: usize) -> Self {
        Hyperparameters {
            learning_rate,
            weight_decay,
            batch_size,
        }
    }

    pub fn validate(&self) -> Result<(), RunSpecError> {
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(RunSpecError::InvalidHyperparameters(format!(
                "learning_rate must lie in (0, 1), got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(RunSpecError::InvalidHyperparameters(format!(
                "weight_decay must be finite and non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(RunSpecError::InvalidHyperparameters(
                "batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Optimizer {
    #[serde(rename = "adamw")]
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheduler {
    #[serde(rename = "linear-warmup-cosine-decay")]
    LinearWarmupCosineDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimeSettings {
    pub epochs_per_iteration: usize,
    pub iterations: usize,
    pub max_sequence_length: usize,
    pub optimizer: Optimizer,
    pub scheduler: Scheduler,
    /// Requested only; adapters without support train at full precision.
    pub mixed_precision: bool,
}

impl Default for RegimeSettings {
    fn default() -> Self {
        RegimeSettings {
            epochs_per_iteration: 10,
            iterations: 3,
            max_sequence_length: 512,
            optimizer: Optimizer::AdamW,
            scheduler: Scheduler::LinearWarmupCosineDecay,
            mixed_precision: true,
        }
    }
}

impl RegimeSettings {
    pub fn validate(&self) -> Result<(), RunSpecError> {
        if self.epochs_per_iteration == 0 {
            return Err(RunSpecError::InvalidRegime(
                "epochs_per_iteration must be at least 1".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(RunSpecError::InvalidRegime("iterations must be at least 1".into()));
        }
        if self.max_sequence_length == 0 {
            return Err(RunSpecError::InvalidRegime(
                "max_sequence_length must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub backbone: BackboneId,
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub regime: RegimeSettings,
    pub seed: i64,
}

#[derive(Serialize)]
struct SharedPart<'a> {
    backbone: &'a BackboneId,
    hyperparameters: &'a Hyperparameters,
    regime: &'a RegimeSettings,
}

impl RunConfig {
    pub fn new(backbone: BackboneId, hyperparameters: Hyperparameters, seed: i64) -> Self {
        RunConfig {
            backbone,
            hyperparameters,
            regime: RegimeSettings::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), RunSpecError> {
        self.backbone.validate()?;
        self.hyperparameters.validate()?;
        self.regime.validate()
    }

    /// SHA-256 over everything except the seed. Runs of one campaign share it.
    pub fn shared_hash(&self) -> String {
        let json = serde_json::to_vec(&SharedPart {
            backbone: &self.backbone,
            hyperparameters: &self.hyperparameters,
            regime: &self.regime,
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn with_seed(&self, seed: i64) -> RunConfig {
        RunConfig { seed, ..self.clone() }
    }

    /// Stable run identifier: `<backbone-slug>-<hash prefix>-seed<seed>`.
    pub fn run_id(&self) -> String {
        format!(
            "{}-{}-seed{}",
            self.backbone.slug(),
            &self.shared_hash()[..12],
            self.seed
        )
    }
}

/// Known backbones and their tuned defaults.
#[derive(Debug, Clone)]
pub struct BackboneCatalog {
    entries: Vec<(BackboneId, Vec<String>, Hyperparameters)>,
}

impl Default for BackboneCatalog {
    fn default() -> Self {
        let mut cat = BackboneCatalog { entries: Vec::new() };
        cat.register_with_aliases(
            BackboneId::new("michiyasunaga/BioLinkBERT-large", "transformer"),
            &["biolinkbert-large"],
            Hyperparameters::new(6.10552e-06, 0.00762736, 16),
        );
        cat.register_with_aliases(
            BackboneId::new("roberta-large", "transformer"),
            &["roberta-large", "facebookai/roberta-large"],
            Hyperparameters::new(7.21422e-06, 0.00694763, 8),
        );
        cat.register_with_aliases(
            BackboneId::new("vinai/bertweet-large", "transformer"),
            &["bertweet-large"],
            Hyperparameters::new(1.17754e-05, 0.01976150, 8),
        );
        cat
    }
}

impl BackboneCatalog {
    pub fn empty() -> Self {
        BackboneCatalog { entries: Vec::new() }
    }

    pub fn register(&mut self, backbone: BackboneId, defaults: Hyperparameters) {
        self.register_with_aliases(backbone, &[], defaults)
    }

    fn register_with_aliases(&mut self, backbone: BackboneId, aliases: &[&str], defaults: Hyperparameters) {
        self.entries.retain(|(b, _, _)| b.name != backbone.name);
        let aliases = aliases.iter().map(|a| a.to_ascii_lowercase()).collect();
        self.entries.push((backbone, aliases, defaults));
    }

    pub fn lookup(&self, name: &str) -> Option<(&BackboneId, &Hyperparameters)> {
        let key = name.to_ascii_lowercase();
        self.entries
            .iter()
            .find(|(b, aliases, _)| b.name.to_ascii_lowercase() == key || aliases.contains(&key))
            .map(|(b, _, h)| (b, h))
    }

    pub fn backbones(&self) -> impl Iterator<Item = &BackboneId> {
        self.entries.iter().map(|(b, _, _)| b)
    }

    pub fn default_hyperparameters(&self, backbone: &BackboneId) -> Result<Hyperparameters, RunSpecError> {
        self.lookup(&backbone.name)
            .map(|(_, h)| *h)
            .ok_or_else(|| RunSpecError::UnknownBackbone(backbone.name.clone()))
    }
}

/// Tuned defaults for the three built-in transformer backbones.
pub fn default_hyperparameters(backbone: &BackboneId) -> Result<Hyperparameters, RunSpecError> {
    BackboneCatalog::default().default_hyperparameters(backbone)
}

/// One config per seed, identical apart from the seed.
pub fn campaign_configs(base: &RunConfig, seeds: &[i64]) -> Result<Vec<RunConfig>, RunSpecError> {
    check_seeds(seeds)?;
    Ok(seeds.iter().map(|&s| base.with_seed(s)).collect())
}

/// Seeds must be non-empty and distinct.
pub fn check_seeds(seeds: &[i64]) -> Result<(), RunSpecError> {
    if seeds.is_empty() {
        return Err(RunSpecError::NoSeeds);
    }
    let mut seen = HashSet::new();
    for &s in seeds {
        if !seen.insert(s) {
            return Err(RunSpecError::DuplicateSeed(s));
        }
    }
    Ok(())
}
