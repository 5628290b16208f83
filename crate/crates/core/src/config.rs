//! Experiment configuration (the JSON document consumed by `train`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{GeneratorConfig, ViewMode};
use crate::error::{Error, Result};
use crate::losses::RegSign;
use crate::model::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryCadence {
    /// Fold each image's latest pseudo-label into memory at the end of the epoch.
    #[default]
    Epoch,
    /// Update memory right after every batch.
    Iteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Reliable-set size `M`; each predicted class contributes `⌊M/C⌋`.
    pub reliable_size: usize,
    pub memory_momentum: f64,
    pub temperature: f64,
    pub alpha_reg: f64,
    pub alpha_uni: f64,
    pub nl_max_epochs: usize,
    pub nl_patience: usize,
    pub scl_epochs: usize,
    pub mu_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub reg_sign: RegSign,
    pub memory_cadence: MemoryCadence,
    pub view_mode: ViewMode,
    /// Cross-batch EMA for class centroids; `None` uses batch means only.
    pub centroid_ema: Option<f64>,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub activation: Activation,
    pub val_fraction: f64,
    /// Initialize the contrastive encoder from the negative-learning backbone.
    pub warm_start_scl: bool,
    /// Std of Gaussian jitter added to training inputs (0 disables it).
    pub feature_jitter: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            reliable_size: 200,
            memory_momentum: 0.9,
            temperature: 0.1,
            alpha_reg: 0.8,
            alpha_uni: 3.0,
            nl_max_epochs: 30,
            nl_patience: 5,
            scl_epochs: 10,
            mu_epochs: 30,
            batch_size: 32,
            learning_rate: 1e-4,
            lr_decay: 0.95,
            reg_sign: RegSign::Prose,
            memory_cadence: MemoryCadence::Epoch,
            view_mode: ViewMode::Multi,
            centroid_ema: Some(0.9),
            hidden_dim: 32,
            feature_dim: 16,
            activation: Activation::Tanh,
            val_fraction: 0.2,
            warm_start_scl: false,
            feature_jitter: 0.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.memory_momentum) {
            return bad(format!("memory_momentum {} outside (0, 1)", self.memory_momentum));
        }
        if !unit(self.val_fraction) {
            return bad(format!("val_fraction {} outside (0, 1)", self.val_fraction));
        }
        if let Some(m) = self.centroid_ema {
            if !unit(m) {
                return bad(format!("centroid_ema {m} outside (0, 1)"));
            }
        }
        if !(self.temperature > 0.0) || !(self.learning_rate >= 0.0) || !(self.lr_decay > 0.0) {
            return bad("temperature and lr_decay must be positive, learning_rate non-negative".into());
        }
        if self.batch_size == 0 || self.hidden_dim == 0 || self.feature_dim == 0 {
            return bad("batch_size, hidden_dim and feature_dim must be positive".into());
        }
        if !(self.alpha_reg >= 0.0) || !(self.alpha_uni >= 0.0) || !(self.feature_jitter >= 0.0) {
            return bad("loss weights and jitter must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Method {
    #[default]
    #[serde(rename = "URL")]
    Url,
    /// Cross-entropy on the rounded mean annotation.
    #[serde(rename = "AVE")]
    Ave,
    /// Cross-entropy on one annotation resampled per image every epoch.
    #[serde(rename = "LS")]
    Ls,
    /// Cross-entropy on every single-annotation copy, concatenated views.
    #[serde(rename = "CE-MV")]
    CeMv,
    /// As `CE-MV` but on the first view only.
    #[serde(rename = "CE-SV")]
    CeSv,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown method {s:?} (URL | AVE | LS | CE-MV | CE-SV)")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

/// Which URL loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Reliable-sample selection plus contrastive warm-up.
    pub contrastive: bool,
    /// Memory pseudo-label regularizer.
    pub memory_reg: bool,
    pub unimodal: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            contrastive: true,
            memory_reg: true,
            unimodal: true,
        }
    }
}

impl Ablation {
    pub fn none() -> Self {
        Ablation {
            contrastive: false,
            memory_reg: false,
            unimodal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        generator: GeneratorConfig,
        #[serde(default = "default_n_test")]
        n_test: usize,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default = "default_classes")]
        classes: usize,
    },
}

fn default_n_test() -> usize {
    400
}

fn default_classes() -> usize {
    5
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            generator: GeneratorConfig::default(),
            n_test: default_n_test(),
        }
    }
}

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Base learning rate of the benchmark preset. The library default (1e-4)
/// suits fine-tuning a pretrained backbone; the small network here trains
/// from scratch and needs a larger step.
pub const BENCHMARK_LEARNING_RATE: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub method: Method,
    pub ablation: Ablation,
    pub hyper: HyperParams,
    pub data: DataSource,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            method: Method::Url,
            ablation: Ablation::default(),
            hyper: HyperParams::default(),
            data: DataSource::default(),
            seeds: vec![1, 2, 3],
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// The synthetic benchmark: 2000 training / 400 test samples, five grades,
    /// three 4-dim views, annotator σ = 1, 1-4 annotators, seeds {1, 2, 3}.
    pub fn benchmark() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.hyper.learning_rate = BENCHMARK_LEARNING_RATE;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported config schema_version {}", self.schema_version)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.hyper.validate()?;
        if let DataSource::Synthetic { generator, n_test } = &self.data {
            generator.validate()?;
            if *n_test == 0 {
                return Err(Error::Config("n_test must be positive".into()));
            }
        }
        Ok(())
    }

    /// The view mode a run actually uses (`CE-SV` forces a single view).
    pub fn effective_view_mode(&self) -> ViewMode {
        match self.method {
            Method::CeSv => ViewMode::Single,
            _ => self.hyper.view_mode,
        }
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
