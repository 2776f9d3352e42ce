//! Hashed bag-of-words logistic regression. Small enough to train inside the
//! test suite, yet it exercises the same regime as the large backbones:
//! AdamW, warmup + cosine decay, seeded data order and token truncation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamW, WarmupCosine};
use super::stub::{read_state, write_state};
use super::{AdapterError, BackboneAdapter, Capabilities, Predictions};
use crate::corpus::{Example, LabeledDataset};
use crate::float::Float;
use crate::runspec::{BackboneId, RunConfig, WARMUP_FRACTION};

const NAME: &str = "hashed-logistic";
const VERSION: &str = "hashed-logistic/1";
/// Backbone family this adapter answers to.
pub const FAMILY: &str = "hashed-logistic";
const DEFAULT_BUCKETS: usize = 1 << 12;
const MAX_TOKENS: usize = 4096;

/// Lowercased alphanumeric runs (plus `#`, `@`, `_`, `'`).
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || matches!(c, '#' | '@' | '_' | '\'')))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone)]
struct Prepared {
    features: Vec<Vec<usize>>,
    targets: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Weights {
    version: String,
    buckets: usize,
    max_tokens: usize,
    bias: f64,
    weights: Vec<f64>,
}

pub struct HashedLogisticAdapter<F> {
    buckets: usize,
    weights: Vec<F>,
    bias: F,
    max_tokens: usize,
    config: Option<RunConfig>,
    data: Option<Prepared>,
    optimizer: Option<AdamW<F>>,
    schedule: Option<WarmupCosine<F>>,
    step: usize,
}

impl<F: Float> Default for HashedLogisticAdapter<F> {
    fn default() -> Self {
        Self::with_buckets(DEFAULT_BUCKETS)
    }
}

impl<F: Float> HashedLogisticAdapter<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_buckets(buckets: usize) -> Self {
        assert!(buckets > 0);
        HashedLogisticAdapter {
            buckets,
            weights: vec![F::zero(); buckets],
            bias: F::zero(),
            max_tokens: MAX_TOKENS,
            config: None,
            data: None,
            optimizer: None,
            schedule: None,
            step: 0,
        }
    }

    /// Bucket indices present in `text`, sorted and deduplicated. Only the
    /// first `max_tokens` tokens count.
    fn featurize(&self, text: &str) -> Vec<usize> {
        let mut idx: Vec<usize> = tokenize(text)
            .iter()
            .take(self.max_tokens)
            .map(|t| (fnv1a(t.as_bytes()) % self.buckets as u64) as usize)
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    fn logit(&self, features: &[usize]) -> F {
        features.iter().fold(self.bias, |acc, &i| acc + self.weights[i])
    }

    fn err(msg: impl Into<String>) -> AdapterError {
        AdapterError::new(NAME, msg)
    }
}

fn sigmoid<F: Float>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

impl<F: Float> BackboneAdapter for HashedLogisticAdapter<F> {
    fn name(&self) -> &str {
        NAME
    }

    fn version(&self) -> String {
        VERSION.into()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_mixed_precision: false,
            max_sequence_length: MAX_TOKENS,
        }
    }

    fn resolves(&self, backbone: &BackboneId) -> bool {
        backbone.family == FAMILY
    }

    fn initialize(&mut self, config: &RunConfig, train: &LabeledDataset) -> Result<(), AdapterError> {
        let labels = train.labels().ok_or_else(|| Self::err("training split is unlabeled"))?;
        if train.is_empty() {
            return Err(Self::err("training split is empty"));
        }
        self.max_tokens = config.regime.max_sequence_length.min(MAX_TOKENS);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed as u64);
        self.weights = (0..self.buckets).map(|_| F::cast(rng.gen_range(-0.01..0.01))).collect();
        self.bias = F::zero();

        let features = train.examples().iter().map(|e| self.featurize(&e.text)).collect();
        let targets = labels.iter().map(|l| l.is_positive()).collect();
        self.data = Some(Prepared { features, targets });

        let hp = &config.hyperparameters;
        let steps_per_epoch = train.len().div_ceil(hp.batch_size);
        let total = steps_per_epoch * config.regime.epochs_per_iteration;
        self.schedule = Some(WarmupCosine::new(F::cast(hp.learning_rate), total, WARMUP_FRACTION));
        self.optimizer = Some(AdamW::new(self.buckets + 1, F::cast(hp.weight_decay)));
        self.step = 0;
        self.config = Some(config.clone());
        Ok(())
    }

    fn train_epoch(&mut self, epoch: usize) -> Result<(), AdapterError> {
        let config = self.config.clone().ok_or_else(|| Self::err("not initialized"))?;
        let data = self.data.take().ok_or_else(|| Self::err("not initialized"))?;
        let mut optimizer = self.optimizer.take().ok_or_else(|| Self::err("not initialized"))?;
        let schedule = self.schedule.ok_or_else(|| Self::err("not initialized"))?;

        // data order depends only on (seed, epoch)
        let mut order: Vec<usize> = (0..data.targets.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64((config.seed as u64) ^ ((epoch as u64) << 32));
        order.shuffle(&mut rng);

        let n_params = self.buckets + 1;
        let mut params = Vec::with_capacity(n_params);
        let mut grads = vec![F::zero(); n_params];
        let buckets = self.buckets;
        for batch in order.chunks(config.hyperparameters.batch_size) {
            grads.iter_mut().for_each(|g| *g = F::zero());
            let scale = F::one() / F::from_count(batch.len());
            for &i in batch {
                let feats = &data.features[i];
                let y = if data.targets[i] { F::one() } else { F::zero() };
                let residual = (sigmoid(self.logit(feats)) - y) * scale;
                for &f in feats {
                    grads[f] = grads[f] + residual;
                }
                grads[buckets] = grads[buckets] + residual;
            }
            params.clear();
            params.extend_from_slice(&self.weights);
            params.push(self.bias);
            let lr = schedule.lr_at(self.step);
            // no decay on the bias term
            optimizer.step(&mut params, &grads, &|i| i < buckets, lr);
            self.bias = params[buckets];
            self.weights.copy_from_slice(&params[..buckets]);
            self.step += 1;
        }

        self.data = Some(data);
        self.optimizer = Some(optimizer);
        Ok(())
    }

    fn predict(&self, examples: &[Example]) -> Result<Predictions, AdapterError> {
        Ok(Predictions::Scores(
            examples
                .iter()
                .map(|e| sigmoid(self.logit(&self.featurize(&e.text))).to_f64().unwrap_or(0.0))
                .collect(),
        ))
    }

    fn save_checkpoint(&self, dir: &Path) -> Result<(), AdapterError> {
        let w = Weights {
            version: VERSION.into(),
            buckets: self.buckets,
            max_tokens: self.max_tokens,
            bias: self.bias.to_f64().unwrap_or(0.0),
            weights: self.weights.iter().map(|w| w.to_f64().unwrap_or(0.0)).collect(),
        };
        write_state(NAME, dir, &w)
    }

    fn load_checkpoint(&mut self, dir: &Path, _config: &RunConfig) -> Result<(), AdapterError> {
        let w: Weights = read_state(NAME, dir)?;
        if w.weights.len() != w.buckets {
            return Err(Self::err("checkpoint weight count does not match bucket count"));
        }
        self.buckets = w.buckets;
        self.max_tokens = w.max_tokens;
        self.bias = F::cast(w.bias);
        self.weights = w.weights.into_iter().map(F::cast).collect();
        Ok(())
    }

    fn settings(&self) -> serde_json::Value {
        serde_json::json!({
            "feature_buckets": self.buckets,
            "max_tokens": self.max_tokens,
            "eval_batch_size": "whole split",
            "data_order": "shuffled per epoch from (seed, epoch)",
            "warmup_fraction": WARMUP_FRACTION,
            "gradient_clipping": null,
            "scalar": std::any::type_name::<F>(),
        })
    }
}
