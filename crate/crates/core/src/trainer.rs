//! Fine-tuning iterations and multi-seed campaigns.
//!
//! Every epoch ends with a validation pass scored on the positive class. The
//! epoch with the highest F1 (earliest on ties) is the only one checkpointed,
//! and its validation predictions represent the run.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, BackboneAdapter, DECISION_THRESHOLD};
use crate::corpus::{LabeledDataset, SplitName};
use crate::ensemble::{majority_vote, EnsembleError, PredictionSet, Provenance, SourceKind};
use crate::metrics::{precision_recall_f1, run_statistics, ConfusionMatrix, RunStatistics};
use crate::registry::{read_json, read_jsonl, write_json, write_jsonl, Registry, RegistryError};
use crate::runspec::{check_seeds, RunConfig, RunSpecError, WARMUP_FRACTION};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is unlabeled")]
    UnlabeledDataset(SplitName),
    #[error("adapter failure: {0}")]
    AdapterFailure(#[from] AdapterError),
    #[error("adapter `{adapter}` cannot run backbone `{backbone}`")]
    UnsupportedBackbone { adapter: String, backbone: String },
    #[error("run `{0}` has no checkpoint")]
    MissingCheckpoint(String),
    #[error("unknown system `{0}` (neither a run nor an ensemble)")]
    UnknownSystem(String),
    #[error(transparent)]
    Config(#[from] RunSpecError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch_index: usize,
    pub f1_positive: f64,
    pub precision_positive: f64,
    pub recall_positive: f64,
}

impl EpochRecord {
    pub fn from_confusion(epoch_index: usize, cm: &ConfusionMatrix) -> Self {
        let m = precision_recall_f1::<f64>(cm);
        EpochRecord {
            epoch_index,
            f1_positive: m.f1,
            precision_positive: m.precision,
            recall_positive: m.recall,
        }
    }
}

/// Index (1-based) of the highest F1, earliest epoch on ties.
pub fn select_best_epoch(records: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<&EpochRecord> = None;
    for r in records {
        if best.is_none_or(|b| r.f1_positive > b.f1_positive) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch_index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentFingerprint {
    pub os: String,
    pub arch: String,
    pub toolkit_version: String,
}

impl EnvironmentFingerprint {
    pub fn current() -> Self {
        EnvironmentFingerprint {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// `meta.json` of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub adapter: String,
    pub adapter_version: String,
    pub adapter_settings: serde_json::Value,
    pub mixed_precision: bool,
    pub warmup_fraction: f64,
    pub decision_threshold: f64,
    pub best_epoch: usize,
    pub environment: EnvironmentFingerprint,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRun {
    pub run_id: String,
    pub config: RunConfig,
    pub epoch_records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub checkpoint: PathBuf,
    pub validation_predictions: PredictionSet,
}

impl TrainedRun {
    pub fn best_record(&self) -> &EpochRecord {
        &self.epoch_records[self.best_epoch - 1]
    }

    pub fn best_f1(&self) -> f64 {
        self.best_record().f1_positive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub id: String,
    pub shared_config_hash: String,
    pub runs: Vec<TrainedRun>,
}

impl Campaign {
    pub fn best_f1s(&self) -> Vec<f64> {
        self.runs.iter().map(TrainedRun::best_f1).collect()
    }

    pub fn statistics(&self) -> RunStatistics<f64> {
        run_statistics(&self.best_f1s())
    }

    pub fn run_ids(&self) -> Vec<String> {
        self.runs.iter().map(|r| r.run_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum CampaignStatus {
    Complete,
    Aborted { failed_seed: i64, error: String },
}

/// `campaigns/<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub id: String,
    pub shared_config_hash: String,
    pub base_config: RunConfig,
    pub seeds: Vec<i64>,
    pub run_ids: Vec<String>,
    pub best_f1: Vec<f64>,
    pub status: CampaignStatus,
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] RunSpecError),
    #[error("seed {seed} failed after {} completed run(s): {source}", completed.len())]
    SeedFailed {
        seed: i64,
        completed: Vec<TrainedRun>,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

pub fn campaign_id(base: &RunConfig, seeds: &[i64]) -> String {
    let seeds: Vec<String> = seeds.iter().map(i64::to_string).collect();
    format!(
        "{}-{}-s{}",
        base.backbone.slug(),
        &base.shared_hash()[..12],
        seeds.join("_")
    )
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Also write each epoch's validation predictions to
    /// `predictions/epochs/epoch-<k>.tsv`.
    pub retain_epoch_predictions: bool,
}

pub struct Trainer<'r> {
    registry: &'r Registry,
    options: TrainOptions,
}

impl<'r> Trainer<'r> {
    pub fn new(registry: &'r Registry) -> Self {
        Trainer {
            registry,
            options: TrainOptions::default(),
        }
    }

    pub fn with_options(mut self, options: TrainOptions) -> Self {
        self.options = options;
        self
    }

    pub fn registry(&self) -> &Registry {
        self.registry
    }

    /// Train one iteration for `config.regime.epochs_per_iteration` epochs
    /// and persist it under `runs/<run-id>/`.
    pub fn run_iteration(
        &self,
        config: &RunConfig,
        train: &LabeledDataset,
        validation: &LabeledDataset,
        adapter: &mut dyn BackboneAdapter,
    ) -> Result<TrainedRun, TrainError> {
        config.validate()?;
        if !train.is_labeled() {
            return Err(TrainError::UnlabeledDataset(train.split_name()));
        }
        let gold = validation
            .labels()
            .ok_or(TrainError::UnlabeledDataset(validation.split_name()))?;
        if !adapter.resolves(&config.backbone) {
            return Err(TrainError::UnsupportedBackbone {
                adapter: adapter.name().into(),
                backbone: config.backbone.name.clone(),
            });
        }

        let run_id = config.run_id();
        let run_dir = self.registry.run_dir(&run_id);
        let _lock = self.registry.lock_dir(&run_dir)?;
        self.registry.reset_run_dir(&run_id)?;
        write_json(&run_dir.join("config.json"), config)?;
        let checkpoint = self.registry.checkpoint_dir(&run_id);

        adapter.initialize(config, train)?;
        let mut records = Vec::with_capacity(config.regime.epochs_per_iteration);
        let mut best: Option<(usize, f64, Vec<crate::corpus::Label>)> = None;
        for epoch in 1..=config.regime.epochs_per_iteration {
            adapter.train_epoch(epoch)?;
            let labels = adapter.predict(validation.examples())?.into_labels();
            if labels.len() != validation.len() {
                return Err(AdapterError::new(
                    adapter.name(),
                    format!(
                        "returned {} predictions for {} examples",
                        labels.len(),
                        validation.len()
                    ),
                )
                .into());
            }
            let cm = ConfusionMatrix::from_pairs(labels.iter().copied().zip(gold.iter().copied()));
            let record = EpochRecord::from_confusion(epoch, &cm);
            if self.options.retain_epoch_predictions {
                let dir = run_dir.join("predictions").join("epochs");
                fs::create_dir_all(&dir).map_err(|source| RegistryError::Io {
                    path: dir.clone(),
                    source,
                })?;
                let p = PredictionSet::for_dataset(&run_id, validation, labels.clone());
                let path = dir.join(format!("epoch-{epoch}.tsv"));
                p.write_tsv(&path)
                    .map_err(|source| RegistryError::Io { path, source })?;
            }
            if best.as_ref().is_none_or(|(_, f1, _)| record.f1_positive > *f1) {
                if checkpoint.exists() {
                    fs::remove_dir_all(&checkpoint).map_err(|source| RegistryError::Io {
                        path: checkpoint.clone(),
                        source,
                    })?;
                }
                fs::create_dir_all(&checkpoint).map_err(|source| RegistryError::Io {
                    path: checkpoint.clone(),
                    source,
                })?;
                adapter.save_checkpoint(&checkpoint)?;
                best = Some((epoch, record.f1_positive, labels));
            }
            records.push(record);
        }
        let (best_epoch, _, best_labels) = best.expect("at least one epoch");
        debug_assert_eq!(select_best_epoch(&records), Some(best_epoch));

        let mut validation_predictions = PredictionSet::for_dataset(&run_id, validation, best_labels);
        validation_predictions.provenance = Provenance::now(SourceKind::Run);
        write_jsonl(&run_dir.join("epochs.jsonl"), &records)?;
        self.registry.write_run_predictions(&run_id, &validation_predictions)?;
        let caps = adapter.capabilities();
        let meta = RunMeta {
            run_id: run_id.clone(),
            adapter: adapter.name().into(),
            adapter_version: adapter.version(),
            adapter_settings: adapter.settings(),
            mixed_precision: config.regime.mixed_precision && caps.supports_mixed_precision,
            warmup_fraction: WARMUP_FRACTION,
            decision_threshold: DECISION_THRESHOLD,
            best_epoch,
            environment: EnvironmentFingerprint::current(),
            created_at: validation_predictions.provenance.created_at,
        };
        write_json(&run_dir.join("meta.json"), &meta)?;

        Ok(TrainedRun {
            run_id,
            config: config.clone(),
            epoch_records: records,
            best_epoch,
            checkpoint,
            validation_predictions,
        })
    }

    /// One iteration per seed, each with a fresh adapter from `make_adapter`.
    /// A failing seed stops the campaign; the runs finished so far are
    /// returned inside the error and the campaign record is marked aborted.
    pub fn run_campaign<M>(
        &self,
        base: &RunConfig,
        seeds: &[i64],
        train: &LabeledDataset,
        validation: &LabeledDataset,
        mut make_adapter: M,
    ) -> Result<Campaign, CampaignError>
    where
        M: FnMut(&RunConfig) -> Result<Box<dyn BackboneAdapter>, AdapterError>,
    {
        check_seeds(seeds)?;
        base.validate()?;
        let id = campaign_id(base, seeds);
        let shared_config_hash = base.shared_hash();
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let config = base.with_seed(seed);
            let outcome = make_adapter(&config)
                .map_err(TrainError::from)
                .and_then(|mut adapter| self.run_iteration(&config, train, validation, adapter.as_mut()));
            match outcome {
                Ok(run) => runs.push(run),
                Err(e) => {
                    let record = CampaignRecord {
                        id: id.clone(),
                        shared_config_hash: shared_config_hash.clone(),
                        base_config: base.clone(),
                        seeds: seeds.to_vec(),
                        run_ids: runs.iter().map(|r: &TrainedRun| r.run_id.clone()).collect(),
                        best_f1: runs.iter().map(TrainedRun::best_f1).collect(),
                        status: CampaignStatus::Aborted {
                            failed_seed: seed,
                            error: e.to_string(),
                        },
                    };
                    self.registry.save_campaign(&id, &record)?;
                    return Err(CampaignError::SeedFailed {
                        seed,
                        completed: runs,
                        source: Box::new(e),
                    });
                }
            }
        }
        let campaign = Campaign {
            id: id.clone(),
            shared_config_hash: shared_config_hash.clone(),
            runs,
        };
        let record = CampaignRecord {
            id: id.clone(),
            shared_config_hash,
            base_config: base.clone(),
            seeds: seeds.to_vec(),
            run_ids: campaign.run_ids(),
            best_f1: campaign.best_f1s(),
            status: CampaignStatus::Complete,
        };
        self.registry.save_campaign(&id, &record)?;
        Ok(campaign)
    }

    /// Reload a persisted run (config, epochs and validation predictions).
    pub fn load_run(&self, run_id: &str) -> Result<TrainedRun, TrainError> {
        if !self.registry.has_run(run_id) {
            return Err(RegistryError::UnknownRun(run_id.into()).into());
        }
        let dir = self.registry.run_dir(run_id);
        let config: RunConfig = read_json(&dir.join("config.json"))?;
        let epoch_records: Vec<EpochRecord> = read_jsonl(&dir.join("epochs.jsonl"))?;
        let best_epoch =
            select_best_epoch(&epoch_records).ok_or_else(|| TrainError::MissingCheckpoint(run_id.into()))?;
        Ok(TrainedRun {
            run_id: run_id.into(),
            config,
            epoch_records,
            best_epoch,
            checkpoint: self.registry.checkpoint_dir(run_id),
            validation_predictions: self.registry.read_run_predictions(run_id, SplitName::Validation)?,
        })
    }

    /// Predict `ds` with a run's best-epoch checkpoint.
    pub fn predict_run(
        &self,
        run_id: &str,
        ds: &LabeledDataset,
        adapter: &mut dyn BackboneAdapter,
    ) -> Result<PredictionSet, TrainError> {
        if !self.registry.has_run(run_id) {
            return Err(RegistryError::UnknownRun(run_id.into()).into());
        }
        let config: RunConfig = read_json(&self.registry.run_dir(run_id).join("config.json"))?;
        let checkpoint = self.registry.checkpoint_dir(run_id);
        let has_files = fs::read_dir(&checkpoint)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if !has_files {
            return Err(TrainError::MissingCheckpoint(run_id.into()));
        }
        adapter.load_checkpoint(&checkpoint, &config)?;
        let labels = adapter.predict(ds.examples())?.into_labels();
        if labels.len() != ds.len() {
            return Err(AdapterError::new(
                adapter.name(),
                format!("returned {} predictions for {} examples", labels.len(), ds.len()),
            )
            .into());
        }
        let mut out = PredictionSet::for_dataset(run_id, ds, labels);
        out.provenance = Provenance::now(SourceKind::Run);
        Ok(out)
    }

    /// Predict with a run or an ensemble id. Ensembles predict with each
    /// member checkpoint and vote under the stored tie policy.
    pub fn predict<M>(
        &self,
        system_id: &str,
        ds: &LabeledDataset,
        mut make_adapter: M,
    ) -> Result<PredictionSet, TrainError>
    where
        M: FnMut(&RunConfig) -> Result<Box<dyn BackboneAdapter>, AdapterError>,
    {
        if self.registry.has_run(system_id) {
            let config: RunConfig = read_json(&self.registry.run_dir(system_id).join("config.json"))?;
            let mut adapter = make_adapter(&config)?;
            return self.predict_run(system_id, ds, adapter.as_mut());
        }
        if self.registry.has_ensemble(system_id) {
            let model = self.registry.load_ensemble(system_id)?;
            let mut members = Vec::with_capacity(model.member_run_ids.len());
            for run_id in &model.member_run_ids {
                if !self.registry.has_run(run_id) {
                    return Err(EnsembleError::UnknownRun(run_id.clone()).into());
                }
                let config: RunConfig = read_json(&self.registry.run_dir(run_id).join("config.json"))?;
                let mut adapter = make_adapter(&config)?;
                members.push(self.predict_run(run_id, ds, adapter.as_mut())?);
            }
            let mut voted = majority_vote(&members, model.tie_policy)?;
            voted.source_id = model.id;
            return Ok(voted);
        }
        Err(TrainError::UnknownSystem(system_id.into()))
    }
}
