use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use seedvote::adapter::{AdapterError, BackboneAdapter, TINY_FAMILY};
use seedvote::corpus::load_dataset_allow_empty;
use seedvote::ensemble::{Provenance, SourceKind};
use seedvote::hpo::{iteration_objective, BestRecord, SearchOutput};
use seedvote::metrics::{comparison_report, published_references, render_confusion, ConfusionFormat, ReportEntry};
use seedvote::registry::write_json;
use seedvote::trainer::{CampaignRecord, CampaignStatus};
use seedvote::{
    build_ensemble, confusion_matrix, execute_search, load_dataset, run_statistics, Hyperparameters, LabeledDataset,
    PredictionSet, Registry, RunConfig, SplitName, TiePolicy, TinyAdapter, Trainer,
};

use crate::config::{AdapterFactory, ObjectiveKind, Settings, REGISTRY_ENV};

const DEFAULT_REGISTRY: &str = "seedvote-registry";

/// Registry location and, when a config file was given, its settings.
pub struct Context {
    pub registry_root: PathBuf,
    pub settings: Option<Settings>,
}

impl Context {
    pub fn new(settings: Option<Settings>, registry_flag: Option<PathBuf>) -> Context {
        let registry_root = match (&settings, registry_flag) {
            (Some(s), _) => s.registry_root.clone(),
            (None, Some(r)) => r,
            (None, None) => match std::env::var_os(REGISTRY_ENV) {
                Some(env) if !env.is_empty() => PathBuf::from(env),
                _ => PathBuf::from(DEFAULT_REGISTRY),
            },
        };
        Context {
            registry_root,
            settings,
        }
    }

    fn settings(&self, command: &str) -> Result<&Settings> {
        self.settings
            .as_ref()
            .with_context(|| format!("`{command}` needs a project config (--config)"))
    }

    fn registry(&self) -> Result<Registry> {
        Registry::open(&self.registry_root)
            .with_context(|| format!("opening registry at {}", self.registry_root.display()))
    }

    /// Adapter factory from the config, or the tiny adapter for runs of
    /// its own family when no config is loaded.
    fn adapter_maker(&self) -> Result<impl Fn(&RunConfig) -> Result<Box<dyn BackboneAdapter>, AdapterError> + Sync> {
        let factory: Option<AdapterFactory> = match &self.settings {
            Some(s) => Some(s.adapter_factory()?),
            None => None,
        };
        Ok(move |config: &RunConfig| match &factory {
            Some(f) => f.make(),
            None if config.backbone.family == TINY_FAMILY => {
                Ok(Box::new(TinyAdapter::new()) as Box<dyn BackboneAdapter>)
            }
            None => Err(AdapterError::new(
                config.backbone.family.clone(),
                format!("no adapter for backbone `{}`; pass --config", config.backbone.name),
            )),
        })
    }

    /// Dataset for `split`: `path` if given, else the config's file.
    fn dataset(&self, split: SplitName, path: Option<&Path>, allow_empty: bool) -> Result<LabeledDataset> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None => match &self.settings {
                Some(s) => s.data_path(split)?,
                None => bail!("no {split} data: pass a file or --config"),
            },
        };
        let format = match &self.settings {
            Some(s) => s.data_format(&path)?,
            None => seedvote::DatasetFormat::from_path(&path)
                .with_context(|| format!("cannot infer dataset format of {}", path.display()))?,
        };
        let ds = if allow_empty {
            load_dataset_allow_empty(&path, format, split)
        } else {
            load_dataset(&path, format, split)
        };
        ds.with_context(|| format!("loading {}", path.display()))
    }
}

fn labeled(ds: LabeledDataset, what: &str) -> Result<LabeledDataset> {
    if !ds.is_labeled() {
        bail!("{what} split `{}` has no gold labels", ds.split_name());
    }
    Ok(ds)
}

/// One campaign summary row: a model, its per-run F1 values, mean and SD.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignRow {
    pub name: String,
    pub f1: Vec<f64>,
    pub mean: f64,
    pub sd: Option<f64>,
}

impl CampaignRow {
    pub fn new(name: impl Into<String>, f1: Vec<f64>) -> CampaignRow {
        let stats = run_statistics(&f1);
        CampaignRow {
            name: name.into(),
            f1,
            mean: stats.mean,
            sd: stats.sd,
        }
    }
}

pub fn campaign_table(rows: &[CampaignRow]) -> String {
    let width = rows.iter().map(|r| r.f1.len()).max().unwrap_or(0);
    let mut out = String::from("| Model |");
    for i in 1..=width {
        let _ = write!(out, " Run {i} |");
    }
    out.push_str(" Mean F1 | SD |\n|---|");
    out.push_str(&"---:|".repeat(width + 2));
    out.push('\n');
    for r in rows {
        let _ = write!(out, "| {} |", r.name);
        for i in 0..width {
            match r.f1.get(i) {
                Some(v) => {
                    let _ = write!(out, " {v:.6} |");
                }
                None => out.push_str(" |"),
            }
        }
        let sd = r.sd.map_or_else(|| "n/a".to_string(), |s| format!("{s:.6}"));
        let _ = writeln!(out, " {:.6} | {sd} |", r.mean);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub campaign_id: String,
    pub run_ids: Vec<String>,
    pub row: CampaignRow,
}

pub fn train(ctx: &Context, out: &mut dyn Write) -> Result<TrainSummary> {
    let s = ctx.settings("train")?;
    let make = ctx.adapter_maker()?;
    let train = labeled(ctx.dataset(SplitName::Train, None, false)?, "training")?;
    let validation = labeled(ctx.dataset(SplitName::Validation, None, false)?, "validation")?;
    let registry = ctx.registry()?;

    let hyperparameters = match s.fixed_hyperparameters()? {
        Some(h) => h,
        None => {
            writeln!(out, "hyperparameters = \"search\": tuning first")?;
            search(s, &registry, &train, &validation, &make, out)?.hyperparameters
        }
    };
    let seeds = s.seeds();
    if seeds.len() != s.project.regime.iterations {
        eprintln!(
            "warning: {} seed(s) given but regime.iterations = {}; training one iteration per seed",
            seeds.len(),
            s.project.regime.iterations
        );
    }
    let base = RunConfig {
        backbone: s.project.backbone.clone(),
        hyperparameters,
        regime: s.project.regime,
        seed: seeds[0],
    };
    let trainer = Trainer::new(&registry);
    let campaign = trainer
        .run_campaign(&base, &seeds, &train, &validation, |c| make(c))
        .context("training campaign")?;

    writeln!(out, "campaign {}", campaign.id)?;
    for run in &campaign.runs {
        writeln!(
            out,
            "  seed {:>4}  best epoch {:>2}  F1 {:.6}  {}",
            run.config.seed,
            run.best_epoch,
            run.best_f1(),
            run.run_id
        )?;
    }
    let row = CampaignRow::new(s.project.backbone.name.clone(), campaign.best_f1s());
    write!(out, "\n{}", campaign_table(std::slice::from_ref(&row)))?;
    Ok(TrainSummary {
        campaign_id: campaign.id.clone(),
        run_ids: campaign.run_ids(),
        row,
    })
}

#[derive(Serialize)]
struct SearchSpec<'a> {
    backbone: &'a seedvote::BackboneId,
    regime: &'a seedvote::RegimeSettings,
    space: &'a seedvote::SearchSpace,
    trials: usize,
    seed: u64,
    objective: ObjectiveKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_learning_rate: Option<f64>,
}

fn search_id(spec: &SearchSpec<'_>) -> String {
    let json = serde_json::to_vec(spec).expect("search spec serializes");
    let hash = hex::encode(Sha256::digest(&json));
    format!("{}-{}", spec.backbone.slug(), &hash[..12])
}

fn search<M>(
    s: &Settings,
    registry: &Registry,
    train: &LabeledDataset,
    validation: &LabeledDataset,
    make: &M,
    out: &mut dyn Write,
) -> Result<BestRecord>
where
    M: Fn(&RunConfig) -> Result<Box<dyn BackboneAdapter>, AdapterError> + Sync,
{
    let cfg = &s.project.search;
    let space = cfg.space();
    let spec = SearchSpec {
        backbone: &s.project.backbone,
        regime: &s.project.regime,
        space: &space,
        trials: cfg.trials,
        seed: cfg.seed,
        objective: cfg.objective,
        target_learning_rate: (cfg.objective == ObjectiveKind::LogDistance).then_some(cfg.target_learning_rate),
    };
    let id = search_id(&spec);
    let dir = registry.search_dir(&id);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("search.json"), &spec)?;
    let output = Some(SearchOutput { dir: &dir });

    let result = match cfg.objective {
        ObjectiveKind::LogDistance => {
            let target = cfg.target_learning_rate;
            if !(target > 0.0 && target.is_finite()) {
                bail!("search.target_learning_rate must be positive");
            }
            let objective = move |h: &Hyperparameters| {
                let d = h.learning_rate.ln() - target.ln();
                Ok(-d * d)
            };
            execute_search(&space, cfg.trials, cfg.seed, cfg.parallelism, objective, output)?
        }
        ObjectiveKind::ValidationF1 => {
            let trainer = Trainer::new(registry);
            let base = RunConfig {
                backbone: s.project.backbone.clone(),
                hyperparameters: Hyperparameters::new(space.learning_rate.lo, space.weight_decay.lo, 1),
                regime: s.project.regime,
                seed: 0,
            };
            let objective = iteration_objective(&trainer, &base, train, validation, make);
            execute_search(&space, cfg.trials, cfg.seed, cfg.parallelism, objective, output)?
        }
    };
    let failed = result.trials.iter().filter(|t| t.objective.is_none()).count();
    let best = result.best_record();
    writeln!(out, "search {id}: {} trial(s), {failed} failed", result.trials.len())?;
    writeln!(
        out,
        "best trial {}: objective {:.6}  learning_rate {:e}  weight_decay {:e}  batch_size {}",
        best.trial_index,
        best.objective,
        best.hyperparameters.learning_rate,
        best.hyperparameters.weight_decay,
        best.hyperparameters.batch_size
    )?;
    writeln!(out, "wrote {}", dir.join("best.json").display())?;
    Ok(best)
}

pub fn tune(ctx: &Context, out: &mut dyn Write) -> Result<BestRecord> {
    let s = ctx.settings("tune")?;
    let registry = ctx.registry()?;
    match s.project.search.objective {
        ObjectiveKind::LogDistance => {
            let empty = LabeledDataset::new(SplitName::Train, Vec::new())?;
            let none = |_: &RunConfig| -> Result<Box<dyn BackboneAdapter>, AdapterError> {
                Err(AdapterError::new("none", "log-distance objective trains nothing"))
            };
            search(s, &registry, &empty, &empty, &none, out)
        }
        ObjectiveKind::ValidationF1 => {
            let make = ctx.adapter_maker()?;
            let train = labeled(ctx.dataset(SplitName::Train, None, false)?, "training")?;
            let validation = labeled(ctx.dataset(SplitName::Validation, None, false)?, "validation")?;
            search(s, &registry, &train, &validation, &make, out)
        }
    }
}

pub fn ensemble(
    ctx: &Context,
    run_ids: &[String],
    campaign: Option<&str>,
    tie_policy: Option<TiePolicy>,
    out: &mut dyn Write,
) -> Result<seedvote::EnsembleModel> {
    let registry = ctx.registry()?;
    let mut members = run_ids.to_vec();
    if let Some(id) = campaign {
        let record: CampaignRecord = registry.load_campaign(id)?;
        if let CampaignStatus::Aborted { failed_seed, .. } = record.status {
            bail!("campaign `{id}` was aborted at seed {failed_seed}; it has no complete run set");
        }
        members.extend(record.run_ids);
    }
    if members.is_empty() {
        bail!("no member runs given (pass run ids or --campaign)");
    }
    let policy = tie_policy
        .or_else(|| ctx.settings.as_ref().map(Settings::tie_policy))
        .unwrap_or_default();
    let model = build_ensemble(&registry, &members, policy)?;
    writeln!(out, "ensemble {}", model.id)?;
    writeln!(out, "  tie policy {}", model.tie_policy)?;
    for m in &model.member_run_ids {
        writeln!(out, "  member {m}")?;
    }
    writeln!(
        out,
        "wrote {}",
        registry.ensemble_dir(&model.id).join("ensemble.json").display()
    )?;
    Ok(model)
}

/// Stored predictions for `split` if the registry has them, otherwise
/// fresh ones from the checkpoints.
fn system_predictions(ctx: &Context, registry: &Registry, system: &str, ds: &LabeledDataset) -> Result<PredictionSet> {
    let stored = if registry.has_run(system) {
        registry.read_run_predictions(system, ds.split_name()).ok()
    } else if registry.has_ensemble(system) {
        registry.read_ensemble_predictions(system, ds.split_name()).ok()
    } else {
        bail!(
            "unknown system `{system}` (not a run or ensemble id in {})",
            registry.root().display()
        );
    };
    if let Some(p) = stored {
        if p.example_ids.iter().map(String::as_str).eq(ds.ids()) {
            return Ok(p);
        }
    }
    let make = ctx.adapter_maker()?;
    Ok(Trainer::new(registry).predict(system, ds, |c| make(c))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Markdown,
    Json,
}

pub struct EvaluateArgs<'a> {
    pub systems: &'a [String],
    pub split: SplitName,
    pub gold: Option<&'a Path>,
    pub with_references: bool,
    pub format: ReportFormat,
    pub out_dir: Option<&'a Path>,
}

pub fn evaluate(
    ctx: &Context,
    args: &EvaluateArgs<'_>,
    out: &mut dyn Write,
) -> Result<seedvote::metrics::ComparisonReport> {
    if args.systems.is_empty() {
        bail!("no systems to evaluate");
    }
    let gold = labeled(ctx.dataset(args.split, args.gold, false)?, "gold")?;
    let registry = ctx.registry()?;
    let preds = args
        .systems
        .iter()
        .map(|id| system_predictions(ctx, &registry, id, &gold))
        .collect::<Result<Vec<_>>>()?;
    let entries = args
        .systems
        .iter()
        .zip(&preds)
        .map(|(name, p)| ReportEntry::Computed {
            name: name.clone(),
            predictions: p,
            gold: &gold,
        })
        .collect();
    let mut report = comparison_report(entries)?;
    if args.with_references {
        report = report.with_references(published_references());
    }
    let markdown = report.to_markdown();
    let json = report.to_json();
    match args.format {
        ReportFormat::Markdown => write!(out, "{markdown}")?,
        ReportFormat::Json => writeln!(out, "{json}")?,
    }
    if let Some(dir) = args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("report.md"), &markdown)?;
        fs::write(dir.join("report.json"), format!("{json}\n"))?;
        for (p, row) in preds.iter().zip(&report.rows) {
            let cm = row.confusion.expect("computed rows carry a confusion matrix");
            let stem = sanitize(&p.source_id);
            fs::write(
                dir.join(format!("{stem}.confusion.txt")),
                render_confusion(&cm, ConfusionFormat::Text),
            )?;
            fs::write(
                dir.join(format!("{stem}.confusion.csv")),
                render_confusion(&cm, ConfusionFormat::Csv),
            )?;
        }
    }
    Ok(report)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn predict(
    ctx: &Context,
    system: &str,
    split: SplitName,
    input: Option<&Path>,
    out_path: &Path,
    out: &mut dyn Write,
) -> Result<PredictionSet> {
    let registry = ctx.registry()?;
    let kind = if registry.has_run(system) {
        SourceKind::Run
    } else if registry.has_ensemble(system) {
        SourceKind::Ensemble
    } else {
        bail!(
            "unknown system `{system}` (not a run or ensemble id in {})",
            registry.root().display()
        );
    };
    let ds = ctx.dataset(split, input, true)?;
    let preds = if ds.is_empty() {
        let mut p = PredictionSet::for_dataset(system, &ds, Vec::new());
        p.provenance = Provenance::now(kind);
        p
    } else {
        let make = ctx.adapter_maker()?;
        Trainer::new(&registry).predict(system, &ds, |c| make(c))?
    };
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    preds
        .write_tsv(out_path)
        .with_context(|| format!("writing {}", out_path.display()))?;
    let positives = preds.labels.iter().filter(|l| l.is_positive()).count();
    writeln!(
        out,
        "{} prediction(s) from {system} ({positives} positive) -> {}",
        preds.len(),
        out_path.display()
    )?;
    Ok(preds)
}

/// Campaign table for the given ids, or every campaign in the registry.
pub fn report_campaigns(ctx: &Context, ids: &[String], out: &mut dyn Write) -> Result<Vec<CampaignRow>> {
    let registry = ctx.registry()?;
    let ids = if ids.is_empty() {
        registry.campaign_ids()?
    } else {
        ids.to_vec()
    };
    if ids.is_empty() {
        bail!("registry {} has no campaigns", registry.root().display());
    }
    let mut rows = Vec::with_capacity(ids.len());
    for id in &ids {
        let record: CampaignRecord = registry.load_campaign(id)?;
        let mut name = record.base_config.backbone.name.clone();
        if let CampaignStatus::Aborted { failed_seed, .. } = record.status {
            name = format!("{name} (aborted at seed {failed_seed})");
        }
        rows.push(CampaignRow::new(name, record.best_f1.clone()));
        writeln!(out, "{id}: seeds {:?}", record.seeds)?;
    }
    write!(out, "\n{}", campaign_table(&rows))?;
    Ok(rows)
}

pub fn report_confusion(
    ctx: &Context,
    system: &str,
    split: SplitName,
    gold: Option<&Path>,
    format: ConfusionFormat,
    out: &mut dyn Write,
) -> Result<seedvote::ConfusionMatrix> {
    let gold = labeled(ctx.dataset(split, gold, false)?, "gold")?;
    let registry = ctx.registry()?;
    let preds = system_predictions(ctx, &registry, system, &gold)?;
    let cm = confusion_matrix(&preds, &gold)?;
    write!(out, "{}", render_confusion(&cm, format))?;
    Ok(cm)
}
