//! Run settings: a TOML config file merged with command-line overrides.
//!
//! ```toml
//! manifest = "data/manifest.toml"
//! dataset = "jsrt"
//! split_file = "splits/jsrt.json"
//! out_dir = "runs"
//! deterministic = true
//!
//! [train]
//! mode = "scan"
//! lambda = 0.001
//! epochs = 350
//! ```
//!
//! Relative paths in the file are resolved against the file's directory.
//! Flags given on the command line win over the file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scan_core::data::DatasetChoice;
use scan_core::train::{TrainConfig, TrainMode};

pub const DEFAULT_OUT_DIR: &str = "runs";
pub const DEFAULT_LATENCY_BUDGET_S: f64 = 5.0;

/// Contents of a config file. Every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub dataset: Option<DatasetChoice>,
    pub split_file: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub deterministic: Option<bool>,
    pub postprocess: Option<bool>,
    pub latency_budget_s: Option<f64>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.manifest, &mut cfg.split_file, &mut cfg.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Command-line values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub dataset: Option<DatasetChoice>,
    pub split_file: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub deterministic: bool,
    pub no_postprocess: bool,
    pub latency_budget_s: Option<f64>,
    pub seed: Option<u64>,
    pub mode: Option<TrainMode>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub pretrain_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
}

impl Overrides {
    /// True when any training hyperparameter was given on the command line.
    pub fn touches_training(&self) -> bool {
        self.seed.is_some()
            || self.mode.is_some()
            || self.lambda.is_some()
            || self.epochs.is_some()
            || self.pretrain_epochs.is_some()
            || self.batch_size.is_some()
            || self.lr.is_some()
    }
}

/// Fully merged settings; this is what a run manifest records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub manifest: Option<PathBuf>,
    pub dataset: DatasetChoice,
    pub split_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub deterministic: bool,
    pub postprocess: bool,
    pub latency_budget_s: f64,
    pub train: TrainConfig,
}

impl Settings {
    pub fn merge(file: FileConfig, cli: &Overrides) -> Result<Self> {
        let mut train = file.train.unwrap_or_default();
        if let Some(v) = cli.seed {
            train.seed = v;
        }
        if let Some(v) = cli.mode {
            train.mode = v;
        }
        if let Some(v) = cli.lambda {
            train.lambda = v;
        }
        if let Some(v) = cli.epochs {
            train.epochs = v;
        }
        if let Some(v) = cli.pretrain_epochs {
            train.pretrain_epochs = v;
        }
        if let Some(v) = cli.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = cli.lr {
            train.lr = v;
        }
        train.validate()?;
        let latency_budget_s = cli.latency_budget_s.or(file.latency_budget_s).unwrap_or(DEFAULT_LATENCY_BUDGET_S);
        anyhow::ensure!(latency_budget_s >= 0.0, "latency budget must be non-negative");
        Ok(Self {
            manifest: cli.manifest.clone().or(file.manifest),
            dataset: cli.dataset.or(file.dataset).unwrap_or(DatasetChoice::Jsrt),
            split_file: cli.split_file.clone().or(file.split_file),
            out_dir: cli.out_dir.clone().or(file.out_dir).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
            deterministic: cli.deterministic || file.deterministic.unwrap_or(false),
            postprocess: !cli.no_postprocess && file.postprocess.unwrap_or(true),
            latency_budget_s,
            train,
        })
    }

    /// Loads the config file (when given) and applies the overrides.
    pub fn resolve(config: Option<&Path>, cli: &Overrides) -> Result<Self> {
        let file = config.map(FileConfig::load).transpose()?.unwrap_or_default();
        Self::merge(file, cli)
    }

    /// Short digest of the merged settings, used in run directory names.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("settings serialize");
        Sha256::digest(&json)[..4].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn require_manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .context("no dataset manifest: pass --manifest or set `manifest` in the config file")
    }

    pub fn require_split(&self) -> Result<&Path> {
        self.split_file
            .as_deref()
            .context("no split file: pass --split-file or set `split_file` in the config file (see `scan prepare`)")
    }
}
