//! Multi-seed fine-tuning campaigns for binary text classification.
//!
//! A campaign trains the same configuration under several seeds, keeps the
//! best epoch of each run by positive-class F1, and combines the runs with a
//! hard majority vote. Hyperparameters come from a random-variant search with
//! FIFO scheduling. Metric and statistics code is generic over [`Float`]; the
//! aliases below fix it to `f64`.

pub mod adapter;
pub mod corpus;
pub mod ensemble;
pub mod float;
pub mod hpo;
pub mod metrics;
pub mod registry;
pub mod runspec;
pub mod synthetic;
pub mod trainer;

pub use adapter::{BackboneAdapter, ConstantAdapter, HashedLogisticAdapter, ScriptedAdapter};
pub use corpus::{load_dataset, summarize, DatasetFormat, Example, Label, LabeledDataset, SplitName};
pub use ensemble::{build_ensemble, majority_vote, EnsembleModel, PredictionSet, TiePolicy};
pub use float::Float;
pub use hpo::{execute_search, generate_trials, SearchResult, SearchSpace};
pub use metrics::{confusion_matrix, precision_recall_f1, run_statistics, ConfusionMatrix};
pub use registry::Registry;
pub use runspec::{campaign_configs, default_hyperparameters, BackboneId, Hyperparameters, RegimeSettings, RunConfig};
pub use trainer::{Campaign, EpochRecord, TrainedRun, Trainer};

pub type Metrics = metrics::ClassificationMetrics<f64>;
pub type Metrics32 = metrics::ClassificationMetrics<f32>;
pub type RunStats = metrics::RunStatistics<f64>;
pub type RunStats32 = metrics::RunStatistics<f32>;
/// The tiny trainable adapter at double precision.
pub type TinyAdapter = HashedLogisticAdapter<f64>;
pub type TinyAdapter32 = HashedLogisticAdapter<f32>;
pub type Schedule = adapter::WarmupCosine<f64>;
pub type Optimizer = adapter::AdamW<f64>;
