//! Random-variant hyperparameter search with a first-in-first-out trial
//! scheduler.
//!
//! Trials are generated up front from a seeded RNG, dispatched strictly in
//! generation order to at most `parallelism` workers, and always run to
//! completion: there is no early stopping or preemption.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, BackboneAdapter};
use crate::corpus::LabeledDataset;
use crate::registry::{append_jsonl, write_json, write_jsonl, RegistryError};
use crate::runspec::{Hyperparameters, RunConfig};
use crate::trainer::Trainer;

/// Seed used for every trial of a production search.
pub const SEARCH_RUN_SEED: i64 = 1;
pub const DEFAULT_TRIAL_BUDGET: usize = 20;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search space has no batch-size choices")]
    EmptySpace,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("parallelism must be at least 1")]
    NoWorkers,
    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Log-uniform interval. `lo == hi` is allowed and pins the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogUniform {
    pub lo: f64,
    pub hi: f64,
}

impl LogUniform {
    pub fn new(lo: f64, hi: f64) -> Self {
        LogUniform { lo, hi }
    }

    fn validate(&self, name: &str) -> Result<(), SearchError> {
        if !(self.lo > 0.0 && self.lo.is_finite() && self.hi.is_finite()) {
            return Err(SearchError::InvalidSpace(format!(
                "{name}: bounds must be positive and finite"
            )));
        }
        if self.lo > self.hi {
            return Err(SearchError::InvalidSpace(format!(
                "{name}: lo {} exceeds hi {}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen();
        if self.lo == self.hi {
            return self.lo;
        }
        let (a, b) = (self.lo.ln(), self.hi.ln());
        (a + u * (b - a)).exp().clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: LogUniform,
    pub weight_decay: LogUniform,
    pub batch_size: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: LogUniform::new(1e-6, 5e-5),
            weight_decay: LogUniform::new(1e-3, 0.1),
            batch_size: vec![8, 16, 32],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.batch_size.is_empty() {
            return Err(SearchError::EmptySpace);
        }
        if self.batch_size.contains(&0) {
            return Err(SearchError::InvalidSpace("batch sizes must be positive".into()));
        }
        self.learning_rate.validate("learning_rate")?;
        self.weight_decay.validate("weight_decay")
    }

    pub fn contains(&self, h: &Hyperparameters) -> bool {
        self.learning_rate.contains(h.learning_rate)
            && self.weight_decay.contains(h.weight_decay)
            && self.batch_size.contains(&h.batch_size)
    }
}

/// `n` configurations drawn from `space`. The same `(space, n, seed)` always
/// yields the same list.
pub fn generate_trials(space: &SearchSpace, n: usize, seed: u64) -> Result<Vec<Hyperparameters>, SearchError> {
    space.validate()?;
    if n == 0 {
        return Err(SearchError::NoTrials);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let learning_rate = space.learning_rate.sample(&mut rng);
            let weight_decay = space.weight_decay.sample(&mut rng);
            let batch_size = space.batch_size[rng.gen_range(0..space.batch_size.len())];
            Hyperparameters {
                learning_rate,
                weight_decay,
                batch_size,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// One line of `search.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub hyperparameters: Hyperparameters,
    pub status: TrialStatus,
    /// Present iff `status` is `done`.
    pub objective: Option<f64>,
    /// Position in which the trial was started by the scheduler.
    pub start_order: Option<usize>,
    pub wall_time_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub trials: Vec<Trial>,
    pub best_index: usize,
    pub best: Hyperparameters,
    pub best_objective: f64,
}

/// Contents of `best.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub trial_index: usize,
    pub objective: f64,
    pub hyperparameters: Hyperparameters,
}

impl SearchResult {
    /// Earliest done trial attaining the highest objective.
    pub fn from_trials(trials: Vec<Trial>) -> Result<SearchResult, SearchError> {
        let mut best: Option<(usize, f64)> = None;
        for t in &trials {
            if let (TrialStatus::Done, Some(obj)) = (t.status, t.objective) {
                if best.is_none_or(|(_, b)| obj > b) {
                    best = Some((t.index, obj));
                }
            }
        }
        let (best_index, best_objective) = best.ok_or(SearchError::AllTrialsFailed(trials.len()))?;
        let best = trials
            .iter()
            .find(|t| t.index == best_index)
            .map(|t| t.hyperparameters)
            .expect("best index comes from the log");
        Ok(SearchResult {
            trials,
            best_index,
            best,
            best_objective,
        })
    }

    pub fn best_record(&self) -> BestRecord {
        BestRecord {
            trial_index: self.best_index,
            objective: self.best_objective,
            hyperparameters: self.best,
        }
    }
}

/// Where to persist the trial log; `search.jsonl` is appended as trials
/// finish and rewritten in index order at the end, next to `best.json`.
pub struct SearchOutput<'a> {
    pub dir: &'a Path,
}

struct Shared {
    queue: VecDeque<usize>,
    started: usize,
    trials: Vec<Trial>,
}

/// Run every generated trial through `objective`.
///
/// Objectives should be finite; higher is better. An `Err`, a panic or a
/// non-finite value marks the trial failed and the search carries on.
pub fn execute_search<O>(
    space: &SearchSpace,
    n: usize,
    seed: u64,
    parallelism: usize,
    objective: O,
    output: Option<SearchOutput<'_>>,
) -> Result<SearchResult, SearchError>
where
    O: Fn(&Hyperparameters) -> Result<f64, String> + Sync,
{
    if parallelism == 0 {
        return Err(SearchError::NoWorkers);
    }
    let configs = generate_trials(space, n, seed)?;
    let log_path = match &output {
        Some(out) => {
            std::fs::create_dir_all(out.dir).map_err(|source| RegistryError::Io {
                path: out.dir.to_path_buf(),
                source,
            })?;
            let p = out.dir.join("search.jsonl");
            if p.exists() {
                std::fs::remove_file(&p).map_err(|source| RegistryError::Io {
                    path: p.clone(),
                    source,
                })?;
            }
            Some(p)
        }
        None => None,
    };

    let shared = Mutex::new(Shared {
        queue: (0..n).collect(),
        started: 0,
        trials: configs
            .iter()
            .enumerate()
            .map(|(index, &hyperparameters)| Trial {
                index,
                hyperparameters,
                status: TrialStatus::Pending,
                objective: None,
                start_order: None,
                wall_time_secs: 0.0,
                error: None,
            })
            .collect(),
    });
    let log_error: Mutex<Option<RegistryError>> = Mutex::new(None);

    let worker = || loop {
        let (index, hp) = {
            let mut s = shared.lock().unwrap_or_else(|e| e.into_inner());
            let Some(index) = s.queue.pop_front() else { break };
            let order = s.started;
            s.started += 1;
            let t = &mut s.trials[index];
            t.status = TrialStatus::Running;
            t.start_order = Some(order);
            (index, t.hyperparameters)
        };
        let clock = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(|| objective(&hp))) {
            Ok(Ok(v)) if v.is_finite() => Ok(v),
            Ok(Ok(v)) => Err(format!("objective returned non-finite value {v}")),
            Ok(Err(e)) => Err(e),
            Err(panic) => Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "objective panicked".into())),
        };
        let elapsed = clock.elapsed().as_secs_f64();
        let mut s = shared.lock().unwrap_or_else(|e| e.into_inner());
        let t = &mut s.trials[index];
        t.wall_time_secs = elapsed;
        match outcome {
            Ok(v) => {
                t.status = TrialStatus::Done;
                t.objective = Some(v);
            }
            Err(e) => {
                t.status = TrialStatus::Failed;
                t.error = Some(e);
            }
        }
        if let Some(path) = &log_path {
            if let Err(e) = append_jsonl(path, &s.trials[index]) {
                log_error.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
            }
        }
    };

    let workers = parallelism.min(n);
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(worker);
            }
        });
    }

    if let Some(e) = log_error.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e.into());
    }
    let trials = shared.into_inner().unwrap_or_else(|e| e.into_inner()).trials;
    if let (Some(out), Some(path)) = (&output, &log_path) {
        write_jsonl(path, &trials)?;
        if let Ok(result) = SearchResult::from_trials(trials.clone()) {
            write_json(&out.dir.join("best.json"), &result.best_record())?;
        }
    }
    SearchResult::from_trials(trials)
}

/// Production objective: best-epoch positive-class F1 of a single iteration
/// at [`SEARCH_RUN_SEED`], with `base` supplying backbone and regime.
pub fn iteration_objective<'a, M>(
    trainer: &'a Trainer<'a>,
    base: &'a RunConfig,
    train: &'a LabeledDataset,
    validation: &'a LabeledDataset,
    make_adapter: M,
) -> impl Fn(&Hyperparameters) -> Result<f64, String> + Sync + 'a
where
    M: Fn(&RunConfig) -> Result<Box<dyn BackboneAdapter>, AdapterError> + Sync + 'a,
{
    move |hp: &Hyperparameters| {
        let config = RunConfig {
            hyperparameters: *hp,
            seed: SEARCH_RUN_SEED,
            ..base.clone()
        };
        let mut adapter = make_adapter(&config).map_err(|e| e.to_string())?;
        trainer
            .run_iteration(&config, train, validation, adapter.as_mut())
            .map(|run| run.best_f1())
            .map_err(|e| e.to_string())
    }
}
