//! Training configuration: a TOML file layer, flag overrides and defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Head, ModelName};
use crate::optim::LrSchedule;

pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_BATCH: usize = 128;

/// Every setting optional, as read from a file or collected from flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head: Option<Head>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub milestones: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_time: Option<bool>,
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<ConfigFile> {
        toml::from_str(text).map_err(|e| Error::Contract(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        ConfigFile::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: ConfigFile) -> ConfigFile {
        ConfigFile {
            model: over.model.or(self.model),
            head: over.head.or(self.head),
            data: over.data.or(self.data),
            out: over.out.or(self.out),
            epochs: over.epochs.or(self.epochs),
            batch: over.batch.or(self.batch),
            lr: over.lr.or(self.lr),
            decay: over.decay.or(self.decay),
            milestones: over.milestones.or(self.milestones),
            seed: over.seed.or(self.seed),
            split_seed: over.split_seed.or(self.split_seed),
            subset: over.subset.or(self.subset),
            eval_every: over.eval_every.or(self.eval_every),
            record_time: over.record_time.or(self.record_time),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelName,
    pub head: Head,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub epochs: usize,
    pub batch: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub split_seed: u64,
    /// Train on the first `k` training images only.
    pub subset: Option<usize>,
    pub eval_every: usize,
    /// Fill the CSV `seconds` column with wall time. Off by default so that
    /// identical runs write identical files.
    pub record_time: bool,
}

impl TrainConfig {
    /// Defaults for everything except the model and output directory.
    pub fn new(model: ModelName, out: impl Into<PathBuf>) -> TrainConfig {
        TrainConfig {
            model,
            head: Head::default(),
            data: None,
            out: out.into(),
            epochs: DEFAULT_EPOCHS,
            batch: DEFAULT_BATCH,
            schedule: LrSchedule::default(),
            seed: 0,
            split_seed: 0,
            subset: None,
            eval_every: 1,
            record_time: false,
        }
    }

    pub fn resolve(file: ConfigFile) -> Result<TrainConfig> {
        let model = file.model.ok_or_else(|| Error::Contract("no model given".into()))?;
        let out = file.out.ok_or_else(|| Error::Contract("no output directory given".into()))?;
        let base = TrainConfig::new(model, out);
        let schedule = LrSchedule::new(
            file.lr.unwrap_or(base.schedule.initial),
            file.decay.unwrap_or(base.schedule.gamma),
            file.milestones.unwrap_or(base.schedule.milestones),
        )?;
        let cfg = TrainConfig {
            head: file.head.unwrap_or(base.head),
            data: file.data,
            epochs: file.epochs.unwrap_or(base.epochs),
            batch: file.batch.unwrap_or(base.batch),
            schedule,
            seed: file.seed.unwrap_or(base.seed),
            split_seed: file.split_seed.unwrap_or(base.split_seed),
            subset: file.subset,
            eval_every: file.eval_every.unwrap_or(base.eval_every),
            record_time: file.record_time.unwrap_or(base.record_time),
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Contract("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Contract("batch size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Contract("eval_every must be at least 1".into()));
        }
        if self.subset == Some(0) {
            return Err(Error::Contract("subset must be at least 1".into()));
        }
        LrSchedule::new(self.schedule.initial, self.schedule.gamma, self.schedule.milestones.clone())?;
        Ok(())
    }

    /// The fully resolved settings in config-file form.
    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            model: Some(self.model),
            head: Some(self.head),
            data: self.data.clone(),
            out: Some(self.out.clone()),
            epochs: Some(self.epochs),
            batch: Some(self.batch),
            lr: Some(self.schedule.initial),
            decay: Some(self.schedule.gamma),
            milestones: Some(self.schedule.milestones.clone()),
            seed: Some(self.seed),
            split_seed: Some(self.split_seed),
            subset: self.subset,
            eval_every: Some(self.eval_every),
            record_time: Some(self.record_time),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("config serializes")
    }
}
