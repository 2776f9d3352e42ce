use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdapterError, BackboneAdapter, Capabilities, Predictions};
use crate::corpus::{Example, Label, LabeledDataset};
use crate::runspec::RunConfig;

/// Predicts one fixed label for everything.
#[derive(Debug, Clone)]
pub struct ConstantAdapter {
    label: Label,
}

impl ConstantAdapter {
    pub fn new(label: Label) -> Self {
        ConstantAdapter { label }
    }
}

impl BackboneAdapter for ConstantAdapter {
    fn name(&self) -> &str {
        "constant"
    }

    fn version(&self) -> String {
        "constant/1".into()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_mixed_precision: false,
            max_sequence_length: usize::MAX,
        }
    }

    fn initialize(&mut self, _config: &RunConfig, _train: &LabeledDataset) -> Result<(), AdapterError> {
        Ok(())
    }

    fn train_epoch(&mut self, _epoch: usize) -> Result<(), AdapterError> {
        Ok(())
    }

    fn predict(&self, examples: &[Example]) -> Result<Predictions, AdapterError> {
        Ok(Predictions::Labels(vec![self.label; examples.len()]))
    }

    fn save_checkpoint(&self, dir: &Path) -> Result<(), AdapterError> {
        write_state(self.name(), dir, &self.label)
    }

    fn load_checkpoint(&mut self, dir: &Path, _config: &RunConfig) -> Result<(), AdapterError> {
        self.label = read_state(self.name(), dir)?;
        Ok(())
    }
}

/// Ids predicted positive after one epoch; everything else is predicted 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochScript {
    pub positive_ids: BTreeSet<String>,
}

impl EpochScript {
    /// Predict the first `tp` gold positives and the first `fp` gold
    /// negatives as positive, so scoring against `gold` yields exactly those
    /// counts.
    pub fn from_counts(gold: &LabeledDataset, tp: usize, fp: usize) -> Result<EpochScript, String> {
        let labels = gold.labels().ok_or("gold split is unlabeled")?;
        let pick = |want: Label, k: usize| -> Result<Vec<String>, String> {
            let ids: Vec<String> = gold
                .examples()
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == want)
                .take(k)
                .map(|(e, _)| e.id.clone())
                .collect();
            if ids.len() < k {
                Err(format!(
                    "asked for {k} examples with gold label {want}, split has {}",
                    ids.len()
                ))
            } else {
                Ok(ids)
            }
        };
        let mut positive_ids: BTreeSet<String> = pick(Label::Positive, tp)?.into_iter().collect();
        positive_ids.extend(pick(Label::Negative, fp)?);
        Ok(EpochScript { positive_ids })
    }
}

/// Per-seed, per-epoch scripted predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub runs: BTreeMap<i64, Vec<EpochScript>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct ScriptState {
    seed: i64,
    epoch: usize,
}

/// Replays a [`Script`]: after epoch `k` of the run with seed `s`, the ids in
/// `runs[s][k - 1]` are predicted positive. Training data is ignored.
#[derive(Debug, Clone)]
pub struct ScriptedAdapter {
    script: Script,
    state: Option<ScriptState>,
}

impl ScriptedAdapter {
    pub fn new(script: Script) -> Self {
        ScriptedAdapter { script, state: None }
    }

    fn err(&self, msg: impl Into<String>) -> AdapterError {
        AdapterError::new(self.name(), msg)
    }
}

impl BackboneAdapter for ScriptedAdapter {
    fn name(&self) -> &str {
        "scripted"
    }

    fn version(&self) -> String {
        "scripted/1".into()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_mixed_precision: false,
            max_sequence_length: usize::MAX,
        }
    }

    fn initialize(&mut self, config: &RunConfig, _train: &LabeledDataset) -> Result<(), AdapterError> {
        let epochs = self
            .script
            .runs
            .get(&config.seed)
            .ok_or_else(|| self.err(format!("script has no entry for seed {}", config.seed)))?;
        if epochs.len() < config.regime.epochs_per_iteration {
            return Err(self.err(format!(
                "script for seed {} covers {} epochs, regime needs {}",
                config.seed,
                epochs.len(),
                config.regime.epochs_per_iteration
            )));
        }
        self.state = Some(ScriptState {
            seed: config.seed,
            epoch: 0,
        });
        Ok(())
    }

    fn train_epoch(&mut self, epoch: usize) -> Result<(), AdapterError> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| AdapterError::new("scripted", "not initialized"))?;
        state.epoch = epoch;
        Ok(())
    }

    fn predict(&self, examples: &[Example]) -> Result<Predictions, AdapterError> {
        let state = self.state.ok_or_else(|| self.err("no model loaded"))?;
        if state.epoch == 0 {
            return Ok(Predictions::Labels(vec![Label::Negative; examples.len()]));
        }
        let script = self
            .script
            .runs
            .get(&state.seed)
            .and_then(|e| e.get(state.epoch - 1))
            .ok_or_else(|| self.err(format!("no script for seed {} epoch {}", state.seed, state.epoch)))?;
        Ok(Predictions::Labels(
            examples
                .iter()
                .map(|e| Label::from(script.positive_ids.contains(&e.id)))
                .collect(),
        ))
    }

    fn save_checkpoint(&self, dir: &Path) -> Result<(), AdapterError> {
        let state = self.state.ok_or_else(|| self.err("nothing to save"))?;
        write_state(self.name(), dir, &state)
    }

    fn load_checkpoint(&mut self, dir: &Path, _config: &RunConfig) -> Result<(), AdapterError> {
        self.state = Some(read_state(self.name(), dir)?);
        Ok(())
    }
}

pub(super) fn write_state<T: Serialize>(adapter: &str, dir: &Path, state: &T) -> Result<(), AdapterError> {
    let path = dir.join("state.json");
    let bytes = serde_json::to_vec(state).map_err(|e| AdapterError::new(adapter, e.to_string()))?;
    fs::write(&path, bytes).map_err(|e| AdapterError::new(adapter, format!("{}: {e}", path.display())))
}

pub(super) fn read_state<T: for<'de> Deserialize<'de>>(adapter: &str, dir: &Path) -> Result<T, AdapterError> {
    let path = dir.join("state.json");
    let bytes = fs::read(&path).map_err(|e| AdapterError::new(adapter, format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| AdapterError::new(adapter, format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SplitName;
    use crate::runspec::{BackboneId, Hyperparameters};

    fn gold() -> LabeledDataset {
        let ex = (0..6)
            .map(|i| Example::new(format!("g{i}"), "t", Some(Label::from(i % 2 == 0))))
            .collect();
        LabeledDataset::new(SplitName::Validation, ex).unwrap()
    }

    #[test]
    fn script_from_counts() {
        let s = EpochScript::from_counts(&gold(), 2, 1).unwrap();
        let ids: Vec<&str> = s.positive_ids.iter().map(String::as_str).collect();
        assert_eq!(ids, ["g0", "g1", "g2"]);
        assert!(EpochScript::from_counts(&gold(), 4, 0).is_err());
    }

    #[test]
    fn replay_and_checkpoint() {
        let g = gold();
        let mut script = Script::default();
        script.runs.insert(
            5,
            vec![
                EpochScript::from_counts(&g, 1, 0).unwrap(),
                EpochScript::from_counts(&g, 3, 0).unwrap(),
            ],
        );
        let mut cfg = RunConfig::new(BackboneId::new("x", ""), Hyperparameters::new(1e-5, 0.0, 8), 5);
        cfg.regime.epochs_per_iteration = 2;
        let mut a = ScriptedAdapter::new(script.clone());
        a.initialize(&cfg, &g).unwrap();
        a.train_epoch(1).unwrap();
        let p1 = a.predict(g.examples()).unwrap().into_labels();
        assert_eq!(p1.iter().filter(|l| l.is_positive()).count(), 1);
        a.train_epoch(2).unwrap();

        let dir = tempfile::tempdir().unwrap();
        a.save_checkpoint(dir.path()).unwrap();
        let mut b = ScriptedAdapter::new(script);
        b.load_checkpoint(dir.path(), &cfg).unwrap();
        assert_eq!(b.predict(g.examples()).unwrap(), a.predict(g.examples()).unwrap());

        let mut missing = ScriptedAdapter::new(Script::default());
        assert!(missing.initialize(&cfg, &g).is_err());
    }
}
