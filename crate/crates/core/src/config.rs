//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zian_tensor::Precision;

use crate::attention::AttentionConfig;
use crate::backbone::BackboneConfig;
use crate::data::augment::AugmentRanges;
use crate::data::preprocess::PreprocessConfig;
use crate::data::synthetic::SyntheticConfig;
use crate::error::{Result, ZianError};
use crate::zian::{Ablation, ModelConfig, ZianConfig};

/// How the late-training step is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Multiply the learning rate by `lr_drop_factor` from `lr_drop_epoch` on.
    LrDrop,
    /// Switch on an L2 penalty of `lr_drop_factor` from `lr_drop_epoch` on.
    WeightDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// 0-based epoch at which the schedule step happens; `None` disables it.
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
    pub schedule: Schedule,
    pub augment: bool,
    pub augment_ranges: AugmentRanges,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 2e-4,
            lr_drop_epoch: Some(20),
            lr_drop_factor: 0.1,
            schedule: Schedule::LrDrop,
            augment: true,
            augment_ranges: AugmentRanges::default(),
        }
    }
}

impl TrainConfig {
    /// `(lr, weight_decay)` in effect during `epoch`.
    pub fn schedule_at(&self, epoch: usize) -> (f64, f64) {
        let stepped = self.lr_drop_epoch.is_some_and(|e| epoch >= e);
        match (self.schedule, stepped) {
            (_, false) => (self.lr, 0.0),
            (Schedule::LrDrop, true) => (self.lr * self.lr_drop_factor, 0.0),
            (Schedule::WeightDecay, true) => (self.lr, self.lr_drop_factor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_count: usize,
    pub test_count: usize,
    /// First generator seed of the training set.
    pub train_seed: u64,
    /// First generator seed of the held-out set.
    pub test_seed: u64,
    pub synthetic: SyntheticConfig,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Split every image at its centerline and keep the half holding the landmark.
    pub bilateral: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            train_count: 512,
            test_count: 128,
            train_seed: 0,
            test_seed: 1_000_000,
            synthetic: SyntheticConfig::default(),
            train_manifest: None,
            test_manifest: None,
            bilateral: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointConfig {
    pub dir: PathBuf,
    /// Write a checkpoint after every epoch (otherwise only at the end).
    pub every_epoch: bool,
}

impl Default for CheckpointConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/zian"),
            every_epoch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub precision: Precision,
    /// Overrides the structural flags of `[model]` and `[attention]`.
    pub ablation: Option<Ablation>,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub backbone: BackboneConfig,
    pub attention: AttentionConfig,
    pub model: ModelConfig,
    pub checkpoint: CheckpointConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            ablation: None,
            train: TrainConfig::default(),
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            backbone: BackboneConfig::default(),
            attention: AttentionConfig::default(),
            model: ModelConfig::default(),
            checkpoint: CheckpointConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ZianError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ZianError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            ZianError::Config(msg) => ZianError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The network configuration with the ablation row applied.
    pub fn zian_config(&self) -> ZianConfig {
        let cfg = ZianConfig {
            backbone: self.backbone.clone(),
            attention: self.attention.clone(),
            model: self.model.clone(),
        };
        match self.ablation {
            Some(a) => cfg.with_ablation(a),
            None => cfg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ZianError::Config(msg));
        let t = &self.train;
        if t.epochs == 0 {
            return bad("train.epochs must be at least 1".into());
        }
        if t.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) || !(t.lr_drop_factor >= 0.0 && t.lr_drop_factor.is_finite()) {
            return bad(format!("invalid learning-rate settings lr={} factor={}", t.lr, t.lr_drop_factor));
        }
        let r = &t.augment_ranges;
        if !(0.0..=1.0).contains(&r.flip_prob) || r.scale_min <= 0.0 || r.scale_min > r.scale_max {
            return bad(format!("invalid augmentation ranges {r:?}"));
        }
        self.preprocess.validate()?;
        if self.model.input_side != self.preprocess.crop_side {
            return bad(format!(
                "model.input_side {} must equal preprocess.crop_side {}",
                self.model.input_side, self.preprocess.crop_side
            ));
        }
        if self.model.coarse_downsample != self.preprocess.coarse_factor {
            return bad(format!(
                "model.coarse_downsample {} must equal preprocess.coarse_factor {}",
                self.model.coarse_downsample, self.preprocess.coarse_factor
            ));
        }
        let d = &self.data;
        match d.source {
            DataSource::Synthetic => d.synthetic.validate()?,
            DataSource::Manifest => {
                if d.train_manifest.is_none() || d.test_manifest.is_none() {
                    return bad("data.source = \"manifest\" needs train_manifest and test_manifest".into());
                }
            }
        }
        if d.source == DataSource::Synthetic && (d.train_count == 0 || d.test_count == 0) {
            return bad("synthetic data needs train_count and test_count ≥ 1".into());
        }
        self.zian_config().validate()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
