use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::WarmupSchedule;
use crate::data::{DatasetSpec, SplitRequest};
use crate::error::{Error, Result};
use crate::ipixloss::IPixConfig;
use crate::ipixloss::Metric;
use crate::teacher_student::{Method, StepConfig};

pub const DEFAULT_SEED: u64 = 12345;

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_epochs() -> usize {
    40
}
fn default_batch() -> usize {
    8
}
fn default_lr() -> f64 {
    0.02
}
fn default_momentum() -> f64 {
    0.9
}
fn default_ema() -> f64 {
    0.99
}
fn default_tau() -> f64 {
    0.8
}
fn default_temperature() -> f64 {
    4.0
}
fn default_alpha_max() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_warmup_epochs() -> usize {
    5
}
fn default_eval_every() -> usize {
    5
}
fn default_hidden() -> usize {
    8
}

/// Everything that determines a training run. Parsed from TOML; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Training dataset directory.
    pub dataset: PathBuf,
    /// Held-out dataset evaluated with its full ground truth. When absent the
    /// unlabeled part of `dataset` is evaluated against `labels_eval.u8`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_dataset: Option<PathBuf>,
    pub method: Method,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_labeled: usize,
    #[serde(default = "default_batch")]
    pub batch_unlabeled: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_ema")]
    pub ema_momentum: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_alpha_max")]
    pub alpha_max: f64,
    #[serde(default = "default_true")]
    pub warmup_enabled: bool,
    #[serde(default = "default_warmup_epochs")]
    pub warmup_epochs: usize,
    /// Evaluate after every `eval_every` epochs (and always after the last);
    /// 0 evaluates only at the end.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_hidden")]
    pub hidden_channels: usize,
}

impl RunConfig {
    /// Reference settings for `method` on the dataset at `dataset`.
    pub fn reference(dataset: impl Into<PathBuf>, method: Method) -> Self {
        RunConfig {
            dataset: dataset.into(),
            eval_dataset: None,
            method,
            seed: DEFAULT_SEED,
            epochs: default_epochs(),
            batch_labeled: default_batch(),
            batch_unlabeled: default_batch(),
            lr: default_lr(),
            momentum: default_momentum(),
            ema_momentum: default_ema(),
            tau: default_tau(),
            temperature: default_temperature(),
            alpha_max: default_alpha_max(),
            warmup_enabled: true,
            warmup_epochs: default_warmup_epochs(),
            eval_every: default_eval_every(),
            hidden_channels: default_hidden(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.dataset.is_relative() {
            self.dataset = base.join(&self.dataset);
        }
        if let Some(p) = &self.eval_dataset {
            if p.is_relative() {
                self.eval_dataset = Some(base.join(p));
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return bad("batch sizes must be ≥ 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return bad(format!("ema_momentum must lie in [0, 1], got {}", self.ema_momentum));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.alpha_max >= 0.0) || !self.alpha_max.is_finite() {
            return bad(format!("alpha_max must be ≥ 0, got {}", self.alpha_max));
        }
        if self.warmup_enabled && self.warmup_epochs == 0 {
            return bad("warmup_epochs must be ≥ 1 when warmup is enabled".into());
        }
        if self.hidden_channels == 0 {
            return bad("hidden_channels must be ≥ 1".into());
        }
        Ok(())
    }

    /// Step-level settings, given the number of optimizer steps per epoch.
    pub fn step_config(&self, steps_per_epoch: usize) -> Result<StepConfig> {
        let warmup_iters = (self.warmup_epochs.max(1) * steps_per_epoch) as u64;
        let schedule = WarmupSchedule::new(warmup_iters, self.alpha_max).map_err(config_err)?;
        let cfg = StepConfig {
            method: self.method,
            lr: self.lr,
            momentum: self.momentum,
            ema_momentum: self.ema_momentum,
            tau: self.tau,
            temperature: self.temperature,
            schedule,
            warmup_enabled: self.warmup_enabled,
            photometric: true,
        };
        cfg.validate().map_err(config_err)?;
        IPixConfig {
            metric: self.method.ipix_metric().unwrap_or(Metric::Kl),
            temperature: self.temperature,
            tau: self.tau,
        }
        .validate()
        .map_err(config_err)?;
        Ok(cfg)
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn config_err(e: Error) -> Error {
    Error::Config(e.to_string())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn default_fraction() -> f64 {
    1.0 / 16.0
}

/// Input of the `gen` command: generator parameters plus the labeled split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    /// Fraction of samples that keep their labels.
    #[serde(default = "default_fraction")]
    pub labeled_fraction: f64,
    /// Exact labeled count; overrides `labeled_fraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_count: Option<usize>,
    #[serde(default = "default_seed")]
    pub split_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            dataset: DatasetSpec::default(),
            labeled_fraction: default_fraction(),
            labeled_count: None,
            split_seed: DEFAULT_SEED,
        }
    }
}

impl GenConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: GenConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.dataset.validate().map_err(config_err)?;
        if cfg.labeled_count.is_none() && !(cfg.labeled_fraction > 0.0 && cfg.labeled_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "labeled_fraction must lie in (0, 1], got {}",
                cfg.labeled_fraction
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn split_request(&self) -> SplitRequest {
        match self.labeled_count {
            Some(n) => SplitRequest::Count(n),
            None => SplitRequest::Fraction(self.labeled_fraction),
        }
    }
}

/// Settings of the `verify` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Random instances per finite-difference or oracle check.
    #[serde(default = "default_instances")]
    pub instances: usize,
}

fn default_instances() -> usize {
    50
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: DEFAULT_SEED,
            instances: default_instances(),
        }
    }
}

impl VerifyConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: VerifyConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.instances == 0 {
            return Err(Error::Config("instances must be ≥ 1".into()));
        }
        Ok(cfg)
    }
}
