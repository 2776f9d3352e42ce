//! On-disk run registry.
//!
//! ```text
//! <root>/runs/<run-id>/config.json
//!                      epochs.jsonl
//!                      checkpoint/                 adapter-defined
//!                      predictions/<split>.tsv     id<TAB>label
//!                      meta.json
//! <root>/campaigns/<campaign-id>.json
//! <root>/ensembles/<ensemble-id>/ensemble.json
//!                                predictions/<split>.tsv
//! <root>/searches/<search-id>/search.jsonl, best.json
//! ```
//!
//! Prediction provenance (with its timestamp) lives next to each TSV as
//! `<split>.provenance.json` so the TSV bytes depend only on the labels.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::SplitName;
use crate::ensemble::{EnsembleModel, PredictionFileError, PredictionSet, Provenance, SourceKind};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0} is locked by another writer (remove the .lock file if no process owns it)")]
    Locked(PathBuf),
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("unknown ensemble `{0}`")]
    UnknownEnsemble(String),
    #[error("unknown campaign `{0}`")]
    UnknownCampaign(String),
    #[error("`{id}` has no {split} predictions")]
    MissingPredictions { id: String, split: SplitName },
    #[error(transparent)]
    PredictionFile(#[from] PredictionFileError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RegistryError + '_ {
    move |source| RegistryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Handle on a registry root. Writes to shared files go through an internal
/// mutex; each run directory additionally carries a lock file while a writer
/// owns it.
#[derive(Debug)]
pub struct Registry {
    root: PathBuf,
    writes: Mutex<()>,
}

/// Exclusive ownership of one run or ensemble directory; released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl Registry {
    pub fn open(root: impl Into<PathBuf>) -> Result<Registry, RegistryError> {
        let root = root.into();
        for sub in ["runs", "campaigns", "ensembles", "searches"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        Ok(Registry {
            root,
            writes: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    pub fn checkpoint_dir(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join("checkpoint")
    }

    pub fn ensemble_dir(&self, ensemble_id: &str) -> PathBuf {
        self.root.join("ensembles").join(ensemble_id)
    }

    pub fn search_dir(&self, search_id: &str) -> PathBuf {
        self.root.join("searches").join(search_id)
    }

    fn campaign_path(&self, campaign_id: &str) -> PathBuf {
        self.root.join("campaigns").join(format!("{campaign_id}.json"))
    }

    pub fn has_run(&self, run_id: &str) -> bool {
        !run_id.is_empty() && self.run_dir(run_id).join("config.json").is_file()
    }

    pub fn has_ensemble(&self, ensemble_id: &str) -> bool {
        !ensemble_id.is_empty() && self.ensemble_dir(ensemble_id).join("ensemble.json").is_file()
    }

    pub fn run_ids(&self) -> Result<Vec<String>, RegistryError> {
        list_dir(&self.root.join("runs"), |p| p.join("config.json").is_file())
    }

    pub fn ensemble_ids(&self) -> Result<Vec<String>, RegistryError> {
        list_dir(&self.root.join("ensembles"), |p| p.join("ensemble.json").is_file())
    }

    pub fn campaign_ids(&self) -> Result<Vec<String>, RegistryError> {
        let dir = self.root.join("campaigns");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_string)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub(crate) fn serialize_writes(&self) -> MutexGuard<'_, ()> {
        self.writes.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Take the lock file of a directory, creating the directory if needed.
    pub fn lock_dir(&self, dir: &Path) -> Result<DirLock, RegistryError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(RegistryError::Locked(dir.to_path_buf())),
            Err(e) => Err(RegistryError::Io { path, source: e }),
        }
    }

    /// Remove stale outputs of a previous run with the same id.
    pub fn reset_run_dir(&self, run_id: &str) -> Result<(), RegistryError> {
        let dir = self.run_dir(run_id);
        for sub in ["checkpoint", "predictions"] {
            let p = dir.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(io_err(&p))?;
            }
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        for file in ["epochs.jsonl", "meta.json", "config.json"] {
            let p = dir.join(file);
            if p.exists() {
                fs::remove_file(&p).map_err(io_err(&p))?;
            }
        }
        Ok(())
    }

    pub fn write_run_predictions(&self, run_id: &str, preds: &PredictionSet) -> Result<(), RegistryError> {
        write_predictions(&self.run_dir(run_id).join("predictions"), preds)
    }

    pub fn read_run_predictions(&self, run_id: &str, split: SplitName) -> Result<PredictionSet, RegistryError> {
        if !self.has_run(run_id) {
            return Err(RegistryError::UnknownRun(run_id.to_string()));
        }
        read_predictions(
            &self.run_dir(run_id).join("predictions"),
            run_id,
            split,
            SourceKind::Run,
        )
    }

    pub fn save_ensemble(&self, model: &EnsembleModel, preds: &PredictionSet) -> Result<(), RegistryError> {
        let dir = self.ensemble_dir(&model.id);
        let _lock = self.lock_dir(&dir)?;
        write_json(&dir.join("ensemble.json"), model)?;
        write_predictions(&dir.join("predictions"), preds)
    }

    pub fn write_ensemble_predictions(&self, ensemble_id: &str, preds: &PredictionSet) -> Result<(), RegistryError> {
        let dir = self.ensemble_dir(ensemble_id);
        let _lock = self.lock_dir(&dir)?;
        write_predictions(&dir.join("predictions"), preds)
    }

    pub fn load_ensemble(&self, ensemble_id: &str) -> Result<EnsembleModel, RegistryError> {
        if !self.has_ensemble(ensemble_id) {
            return Err(RegistryError::UnknownEnsemble(ensemble_id.to_string()));
        }
        read_json(&self.ensemble_dir(ensemble_id).join("ensemble.json"))
    }

    pub fn read_ensemble_predictions(
        &self,
        ensemble_id: &str,
        split: SplitName,
    ) -> Result<PredictionSet, RegistryError> {
        if !self.has_ensemble(ensemble_id) {
            return Err(RegistryError::UnknownEnsemble(ensemble_id.to_string()));
        }
        read_predictions(
            &self.ensemble_dir(ensemble_id).join("predictions"),
            ensemble_id,
            split,
            SourceKind::Ensemble,
        )
    }

    pub fn save_campaign<T: Serialize>(&self, campaign_id: &str, record: &T) -> Result<(), RegistryError> {
        let _guard = self.serialize_writes();
        write_json(&self.campaign_path(campaign_id), record)
    }

    pub fn load_campaign<T: DeserializeOwned>(&self, campaign_id: &str) -> Result<T, RegistryError> {
        let path = self.campaign_path(campaign_id);
        if !path.is_file() {
            return Err(RegistryError::UnknownCampaign(campaign_id.to_string()));
        }
        read_json(&path)
    }
}

fn list_dir(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<String>, RegistryError> {
    let mut ids: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter(|e| keep(&e.path()))
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    ids.sort();
    Ok(ids)
}

fn write_predictions(dir: &Path, preds: &PredictionSet) -> Result<(), RegistryError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tsv = dir.join(format!("{}.tsv", preds.split_name));
    let tmp = tsv.with_extension("tsv.tmp");
    preds.write_tsv(&tmp).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &tsv).map_err(io_err(&tsv))?;
    write_json(
        &dir.join(format!("{}.provenance.json", preds.split_name)),
        &preds.provenance,
    )
}

fn read_predictions(
    dir: &Path,
    source_id: &str,
    split: SplitName,
    kind: SourceKind,
) -> Result<PredictionSet, RegistryError> {
    let tsv = dir.join(format!("{split}.tsv"));
    if !tsv.is_file() {
        return Err(RegistryError::MissingPredictions {
            id: source_id.to_string(),
            split,
        });
    }
    let prov_path = dir.join(format!("{split}.provenance.json"));
    let provenance = if prov_path.is_file() {
        read_json(&prov_path)?
    } else {
        Provenance {
            kind,
            members: Vec::new(),
            tie_policy: None,
            created_at: 0,
        }
    };
    Ok(PredictionSet::read_tsv(&tsv, source_id, split, provenance)?)
}

/// Pretty JSON with a trailing newline, written via a temp file and rename.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), RegistryError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| RegistryError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RegistryError> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| RegistryError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// One compact JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RegistryError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|source| RegistryError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn append_jsonl<T: Serialize>(path: &Path, item: &T) -> Result<(), RegistryError> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut line = serde_json::to_vec(item).map_err(|source| RegistryError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    line.push(b'\n');
    f.write_all(&line).map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RegistryError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| RegistryError::Json {
            path: path.to_path_buf(),
            source,
        })?);
    }
    Ok(out)
}
