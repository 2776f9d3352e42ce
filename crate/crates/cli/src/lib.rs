//! Command-line front end for seedvote campaigns.
//!
//! Each subcommand is a function in [`commands`] that writes its report to a
//! caller-supplied writer, so the binary and the tests share one code path.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use seedvote::metrics::ConfusionFormat;
use seedvote::{SplitName, TiePolicy};

use commands::{Context, EvaluateArgs, ReportFormat};
use config::{Overrides, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "seedvote",
    version,
    about = "Multi-seed fine-tuning campaigns with majority-vote ensembles"
)]
pub struct Cli {
    /// Project config (TOML, or JSON with a .json extension).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Registry root. Falls back to $SEEDVOTE_REGISTRY, then the config's output_dir.
    #[arg(long, global = true)]
    pub registry: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one iteration per seed and print the per-run F1 table.
    Train(TrainArgs),
    /// Random-variant hyperparameter search; writes best.json.
    Tune(TuneArgs),
    /// Combine runs by hard majority vote.
    Ensemble(EnsembleCmd),
    /// Score runs or ensembles against a gold split.
    Evaluate(EvaluateCmd),
    /// Write `id<TAB>label` predictions for a split.
    Predict(PredictCmd),
    /// Summaries from the registry without retraining.
    Report(ReportCmd),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<i64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Trial budget.
    #[arg(long, short = 'n')]
    pub trials: Option<usize>,
    /// Sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EnsembleCmd {
    /// Member run ids.
    pub runs: Vec<String>,
    /// Use every run of this campaign.
    #[arg(long)]
    pub campaign: Option<String>,
    #[arg(long)]
    pub tie_policy: Option<TiePolicy>,
}

#[derive(Debug, Args)]
pub struct EvaluateCmd {
    /// Run or ensemble ids.
    #[arg(required = true)]
    pub systems: Vec<String>,
    #[arg(long, default_value = "validation")]
    pub split: SplitName,
    /// Gold file; defaults to the config's file for the split.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Append the published reference rows.
    #[arg(long)]
    pub with_references: bool,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: ReportFormat,
    /// Also write report.md, report.json and confusion tables here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictCmd {
    /// Run or ensemble id.
    pub system: String,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    /// Input file; defaults to the config's file for the split.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportCmd {
    /// Campaign ids; all campaigns when omitted.
    #[arg(long = "campaign")]
    pub campaigns: Vec<String>,
    /// Print the confusion table of this run or ensemble instead.
    #[arg(long)]
    pub confusion: Option<String>,
    #[arg(long, default_value = "validation")]
    pub split: SplitName,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// text or csv.
    #[arg(long, default_value = "text")]
    pub format: ConfusionFormat,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides {
            registry: self.registry.clone(),
            ..Overrides::default()
        };
        match &self.command {
            Command::Train(a) => {
                o.seeds = a.seeds.clone();
                o.epochs = a.epochs;
            }
            Command::Tune(a) => {
                o.trials = a.trials;
                o.search_seed = a.seed;
                o.parallelism = a.parallelism;
                o.epochs = a.epochs;
            }
            Command::Ensemble(a) => o.tie_policy = a.tie_policy,
            _ => {}
        }
        o
    }
}

/// Load and validate the config, then dispatch.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let settings = match &cli.config {
        Some(path) => Some(Settings::load(path, &cli.overrides())?),
        None => None,
    };
    let ctx = Context::new(settings, cli.registry.clone());
    match &cli.command {
        Command::Train(_) => {
            commands::train(&ctx, out)?;
        }
        Command::Tune(_) => {
            commands::tune(&ctx, out)?;
        }
        Command::Ensemble(a) => {
            commands::ensemble(&ctx, &a.runs, a.campaign.as_deref(), a.tie_policy, out)?;
        }
        Command::Evaluate(a) => {
            let args = EvaluateArgs {
                systems: &a.systems,
                split: a.split,
                gold: a.gold.as_deref(),
                with_references: a.with_references,
                format: a.format,
                out_dir: a.out.as_deref(),
            };
            commands::evaluate(&ctx, &args, out)?;
        }
        Command::Predict(a) => {
            commands::predict(&ctx, &a.system, a.split, a.input.as_deref(), &a.out, out)?;
        }
        Command::Report(a) => match &a.confusion {
            Some(system) => {
                commands::report_confusion(&ctx, system, a.split, a.gold.as_deref(), a.format, out)?;
            }
            None => {
                commands::report_campaigns(&ctx, &a.campaigns, out)?;
            }
        },
    }
    Ok(())
}
