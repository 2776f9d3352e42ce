//! Project configuration files (TOML, or JSON by extension).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use seedvote::adapter::{AdapterError, BackboneAdapter, Script};
use seedvote::hpo::{LogUniform, SearchSpace, DEFAULT_TRIAL_BUDGET};
use seedvote::runspec::{check_seeds, BackboneCatalog, DEFAULT_SEEDS};
use seedvote::{
    BackboneId, ConstantAdapter, DatasetFormat, Hyperparameters, Label, RegimeSettings, ScriptedAdapter, SplitName,
    TiePolicy, TinyAdapter,
};

/// Environment variable naming the registry root.
pub const REGISTRY_ENV: &str = "SEEDVOTE_REGISTRY";
const DEFAULT_REGISTRY: &str = "seedvote-registry";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: Option<DatasetFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Tiny,
    Scripted,
    Constant,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSection {
    pub kind: Option<AdapterKind>,
    /// Script file for the scripted adapter.
    pub script: Option<PathBuf>,
    /// Output label for the constant adapter.
    pub label: Option<Label>,
    /// Feature buckets for the tiny adapter.
    pub buckets: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperparameterSetting {
    Explicit(Hyperparameters),
    /// Only `"search"` is accepted.
    Keyword(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// Best-epoch validation F1 of a single seeded iteration.
    ValidationF1,
    /// Negative squared log-distance of the learning rate from a target.
    LogDistance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub learning_rate: Option<[f64; 2]>,
    pub weight_decay: Option<[f64; 2]>,
    pub batch_size: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub trials: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub objective: ObjectiveKind,
    pub target_learning_rate: f64,
    pub space: Option<SpaceSection>,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            trials: DEFAULT_TRIAL_BUDGET,
            seed: 0,
            parallelism: 1,
            objective: ObjectiveKind::ValidationF1,
            target_learning_rate: 7.21422e-06,
            space: None,
        }
    }
}

impl SearchSection {
    pub fn space(&self) -> SearchSpace {
        let mut space = SearchSpace::default();
        if let Some(s) = &self.space {
            if let Some([lo, hi]) = s.learning_rate {
                space.learning_rate = LogUniform::new(lo, hi);
            }
            if let Some([lo, hi]) = s.weight_decay {
                space.weight_decay = LogUniform::new(lo, hi);
            }
            if let Some(b) = &s.batch_size {
                space.batch_size = b.clone();
            }
        }
        space
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub tie_policy: Option<TiePolicy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataPaths,
    pub backbone: BackboneId,
    #[serde(default)]
    pub adapter: AdapterSection,
    pub hyperparameters: Option<HyperparameterSetting>,
    #[serde(default)]
    pub regime: RegimeSettings,
    pub seeds: Option<Vec<i64>>,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub search: SearchSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub registry: Option<PathBuf>,
    pub seeds: Option<Vec<i64>>,
    pub epochs: Option<usize>,
    pub trials: Option<usize>,
    pub search_seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub tie_policy: Option<TiePolicy>,
}

/// A loaded, path-resolved configuration.
#[derive(Debug, Clone)]
pub struct Settings {
    pub project: ProjectConfig,
    pub base_dir: PathBuf,
    pub registry_root: PathBuf,
}

impl ProjectConfig {
    pub fn parse(text: &str, json: bool) -> Result<ProjectConfig> {
        if json {
            serde_json::from_str(text).context("parsing JSON config")
        } else {
            toml::from_str(text).context("parsing TOML config")
        }
    }

    pub fn load(path: &Path) -> Result<ProjectConfig> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, json).with_context(|| format!("in {}", path.display()))
    }
}

impl Settings {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Settings> {
        let project = ProjectConfig::load(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Settings::from_project(project, base_dir, overrides)
    }

    pub fn from_project(mut project: ProjectConfig, base_dir: PathBuf, overrides: &Overrides) -> Result<Settings> {
        if let Some(seeds) = &overrides.seeds {
            project.seeds = Some(seeds.clone());
        }
        if let Some(e) = overrides.epochs {
            project.regime.epochs_per_iteration = e;
        }
        if let Some(t) = overrides.trials {
            project.search.trials = t;
        }
        if let Some(s) = overrides.search_seed {
            project.search.seed = s;
        }
        if let Some(p) = overrides.parallelism {
            project.search.parallelism = p;
        }
        if let Some(t) = overrides.tie_policy {
            project.ensemble.tie_policy = Some(t);
        }
        let registry_root = match (&overrides.registry, std::env::var_os(REGISTRY_ENV), &project.output_dir) {
            (Some(r), _, _) => r.clone(),
            (None, Some(env), _) if !env.is_empty() => PathBuf::from(env),
            (None, _, Some(dir)) => base_dir.join(dir),
            _ => base_dir.join(DEFAULT_REGISTRY),
        };
        let settings = Settings {
            project,
            base_dir,
            registry_root,
        };
        settings.validate()?;
        Ok(settings)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Result<()> {
        let p = &self.project;
        p.backbone.validate()?;
        p.regime.validate()?;
        for (split, path) in [
            ("train", &p.data.train),
            ("validation", &p.data.validation),
            ("test", &p.data.test),
        ] {
            if let Some(path) = path {
                let full = self.resolve(path);
                if !full.is_file() {
                    bail!("{split} data file {} does not exist", full.display());
                }
            }
        }
        if let Some(seeds) = &p.seeds {
            check_seeds(seeds)?;
        }
        if let Some(HyperparameterSetting::Keyword(k)) = &p.hyperparameters {
            if k != "search" {
                bail!("hyperparameters must be a table or the string \"search\", got \"{k}\"");
            }
        }
        if let Some(HyperparameterSetting::Explicit(h)) = &p.hyperparameters {
            h.validate()?;
        }
        if p.search.trials == 0 {
            bail!("search.trials must be at least 1");
        }
        if p.search.parallelism == 0 {
            bail!("search.parallelism must be at least 1");
        }
        if let Some(script) = &p.adapter.script {
            let full = self.resolve(script);
            if !full.is_file() {
                bail!("adapter script {} does not exist", full.display());
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<i64> {
        self.project.seeds.clone().unwrap_or_else(|| DEFAULT_SEEDS.to_vec())
    }

    pub fn tie_policy(&self) -> TiePolicy {
        self.project.ensemble.tie_policy.unwrap_or_default()
    }

    pub fn data_path(&self, split: SplitName) -> Result<PathBuf> {
        let d = &self.project.data;
        let p = match split {
            SplitName::Train => &d.train,
            SplitName::Validation => &d.validation,
            SplitName::Test => &d.test,
        };
        match p {
            Some(p) => Ok(self.resolve(p)),
            None => bail!("config has no data.{split} path"),
        }
    }

    pub fn data_format(&self, path: &Path) -> Result<DatasetFormat> {
        if let Some(f) = self.project.data.format {
            return Ok(f);
        }
        DatasetFormat::from_path(path)
            .with_context(|| format!("cannot infer dataset format of {}; set data.format", path.display()))
    }

    pub fn catalog(&self) -> BackboneCatalog {
        let mut cat = BackboneCatalog::default();
        cat.register(
            BackboneId::new("tiny-bow", seedvote::adapter::TINY_FAMILY),
            Hyperparameters::new(0.05, 0.01, 16),
        );
        cat
    }

    /// Explicit values, or the catalog defaults for the backbone. `None`
    /// when the config asks for a search.
    pub fn fixed_hyperparameters(&self) -> Result<Option<Hyperparameters>> {
        match &self.project.hyperparameters {
            Some(HyperparameterSetting::Explicit(h)) => Ok(Some(*h)),
            Some(HyperparameterSetting::Keyword(_)) => Ok(None),
            None => Ok(Some(self.catalog().default_hyperparameters(&self.project.backbone)?)),
        }
    }

    pub fn adapter_kind(&self) -> Result<AdapterKind> {
        if let Some(kind) = self.project.adapter.kind {
            return Ok(kind);
        }
        if self.project.backbone.family == seedvote::adapter::TINY_FAMILY {
            return Ok(AdapterKind::Tiny);
        }
        bail!(
            "no adapter available for backbone `{}` (family `{}`); set adapter.kind or plug an adapter in through the library",
            self.project.backbone.name,
            self.project.backbone.family
        )
    }

    pub fn adapter_factory(&self) -> Result<AdapterFactory> {
        let kind = self.adapter_kind()?;
        let script = match kind {
            AdapterKind::Scripted => {
                let path = self
                    .project
                    .adapter
                    .script
                    .as_ref()
                    .context("adapter.kind = \"scripted\" needs adapter.script")?;
                let full = self.resolve(path);
                let text = fs::read_to_string(&full).with_context(|| format!("reading {}", full.display()))?;
                Some(serde_json::from_str(&text).with_context(|| format!("parsing script {}", full.display()))?)
            }
            _ => None,
        };
        Ok(AdapterFactory {
            kind,
            script,
            label: self.project.adapter.label.unwrap_or(Label::Positive),
            buckets: self.project.adapter.buckets,
        })
    }
}

/// Builds a fresh adapter per run.
#[derive(Debug, Clone)]
pub struct AdapterFactory {
    kind: AdapterKind,
    script: Option<Script>,
    label: Label,
    buckets: Option<usize>,
}

impl AdapterFactory {
    pub fn make(&self) -> Result<Box<dyn BackboneAdapter>, AdapterError> {
        Ok(match self.kind {
            AdapterKind::Tiny => match self.buckets {
                Some(b) if b > 0 => Box::new(TinyAdapter::with_buckets(b)),
                Some(_) => return Err(AdapterError::new("hashed-logistic", "buckets must be positive")),
                None => Box::new(TinyAdapter::new()),
            },
            AdapterKind::Scripted => Box::new(ScriptedAdapter::new(self.script.clone().unwrap_or_default())),
            AdapterKind::Constant => Box::new(ConstantAdapter::new(self.label)),
        })
    }
}
