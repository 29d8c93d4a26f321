//! Model, regularizer and training configuration.
//!
//! On disk a configuration is one flat TOML table ([`ConfigFile`]); every key is
//! optional and defaults to the full-scale training recipe (ViT-B/16 at 224px,
//! AdamW 1e-4 → 1e-6 cosine, weight decay 0.01, batch 24, patience 20).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KidError, Result};
use crate::params::TrainMode;
use crate::pretrain::PretrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { image_size: 224, patch_size: 16, embed_dim: 768, num_layers: 12, num_heads: 12, mlp_ratio: 4.0, num_classes: 2 }
    }
}

impl BackboneConfig {
    /// The 4-layer, width-64 model used for desk-scale runs.
    pub fn toy() -> Self {
        Self { image_size: 32, patch_size: 8, embed_dim: 64, num_layers: 4, num_heads: 4, mlp_ratio: 2.0, num_classes: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(KidError::Config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(KidError::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.num_layers < 3 {
            return Err(KidError::Config(format!("num_layers must be at least 3, got {}", self.num_layers)));
        }
        if self.num_classes != 2 {
            return Err(KidError::Config("num_classes must be 2".into()));
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(KidError::Config("mlp_ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64) * self.mlp_ratio).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub beta: f64,
    pub mu: f64,
    /// Last shallow layer (inclusive); suppression covers `0..=shallow_cutoff`.
    pub shallow_cutoff: usize,
    pub deep_layers: Vec<usize>,
}

impl RegularizerConfig {
    /// Shallow layers are the first half; the deep set is the last three layers,
    /// clamped so it never overlaps the shallow range.
    pub fn for_layers(num_layers: usize, beta: f64, mu: f64) -> Self {
        let shallow_cutoff = (num_layers / 2).saturating_sub(1);
        let deep_count = 3.min(num_layers - shallow_cutoff - 1);
        let deep_layers = (num_layers - deep_count..num_layers).collect();
        Self { beta, mu, shallow_cutoff, deep_layers }
    }

    pub fn shallow_layers(&self) -> std::ops::RangeInclusive<usize> {
        0..=self.shallow_cutoff
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(KidError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.mu >= 0.0) {
            return Err(KidError::Config(format!("mu must be non-negative, got {}", self.mu)));
        }
        if self.shallow_cutoff >= num_layers {
            return Err(KidError::Config(format!("shallow_cutoff {} >= num_layers {num_layers}", self.shallow_cutoff)));
        }
        for &l in &self.deep_layers {
            if l >= num_layers {
                return Err(KidError::Config(format!("deep layer {l} out of range")));
            }
            if l <= self.shallow_cutoff {
                return Err(KidError::Config(format!("layer {l} is both shallow and deep")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopOn {
    TrainLoss,
    ValLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchActivationMode {
    Row,
    Column,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub lr_init: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// (real, fake) pairs per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub regularizer: RegularizerConfig,
    pub gamma0: f64,
    pub gamma1: f64,
    pub dice_smooth: f64,
    pub backbone: BackboneConfig,
    pub mode: TrainMode,
    /// Ablation switch for the localization branch (dice loss).
    pub localization: bool,
    /// Ablation switch for the suppression and contrast losses.
    pub regularizers: bool,
    pub augment: bool,
    pub early_stop_on: EarlyStopOn,
    pub val_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        ConfigFile::default().into_training().expect("default configuration is valid")
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.regularizer.validate(self.backbone.num_layers)?;
        if !(self.lr_min < self.lr_init) || self.lr_min < 0.0 {
            return Err(KidError::Config(format!("need 0 <= lr_min < lr_init, got {} / {}", self.lr_min, self.lr_init)));
        }
        if self.patience == 0 {
            return Err(KidError::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(KidError::Config("batch_size and max_epochs must be positive".into()));
        }
        crate::localization::check_thresholds(self.gamma0, self.gamma1)?;
        if !(self.dice_smooth > 0.0) {
            return Err(KidError::Config("dice_smooth must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(KidError::Config("val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Whether the run carries the injection pathway at all.
    pub fn injected(&self) -> bool {
        self.mode != TrainMode::Baseline
    }

    pub fn uses_localization(&self) -> bool {
        self.injected() && self.localization
    }

    pub fn uses_regularizers(&self) -> bool {
        self.injected() && self.regularizers
    }
}

/// Flat on-disk configuration. Every key has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    pub mode: TrainMode,
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub lr_init: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta: f64,
    pub mu: f64,
    pub shallow_cutoff: Option<usize>,
    pub deep_layers: Option<Vec<usize>>,
    pub gamma0: f64,
    pub gamma1: f64,
    pub dice_smooth: f64,
    pub localization: bool,
    pub regularizers: bool,
    pub augment: bool,
    pub early_stop_on: EarlyStopOn,
    pub val_fraction: f64,
    /// Number of procedural faces when no dataset directory is given.
    pub dataset_size: usize,
    pub dataset_dir: Option<String>,
    /// Unseen procedural faces drawn for evaluation.
    pub test_size: usize,
    pub video_frames: usize,
    pub patch_activation: PatchActivationMode,
    pub output_dir: String,
    /// Pretrained backbone weights; overrides `pretrain_epochs`.
    pub backbone_checkpoint: Option<String>,
    /// Epochs of attribute-regression pretraining on real faces; 0 keeps the random init.
    pub pretrain_epochs: usize,
    pub pretrain_corpus_size: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch_size: usize,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let b = BackboneConfig::default();
        Self {
            seed: 0,
            mode: TrainMode::Injected,
            image_size: b.image_size,
            patch_size: b.patch_size,
            embed_dim: b.embed_dim,
            num_layers: b.num_layers,
            num_heads: b.num_heads,
            mlp_ratio: b.mlp_ratio,
            lr_init: 1e-4,
            lr_min: 1e-6,
            weight_decay: 0.01,
            batch_size: 24,
            max_epochs: 300,
            patience: 20,
            beta: 1.2,
            mu: 0.1,
            shallow_cutoff: None,
            deep_layers: None,
            gamma0: 0.2,
            gamma1: 0.8,
            dice_smooth: 1.0,
            localization: true,
            regularizers: true,
            augment: true,
            early_stop_on: EarlyStopOn::TrainLoss,
            val_fraction: 0.1,
            dataset_size: 200,
            dataset_dir: None,
            test_size: 200,
            video_frames: 32,
            patch_activation: PatchActivationMode::Row,
            output_dir: "runs".into(),
            backbone_checkpoint: None,
            pretrain_epochs: 0,
            pretrain_corpus_size: 800,
            pretrain_lr: 2e-3,
            pretrain_batch_size: 16,
        }
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| KidError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Short stable digest of the configuration, excluding the seed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            mlp_ratio: self.mlp_ratio,
            num_classes: 2,
        }
    }

    pub fn pretraining(&self) -> Option<PretrainConfig> {
        (self.pretrain_epochs > 0).then(|| PretrainConfig {
            corpus_size: self.pretrain_corpus_size,
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            weight_decay: self.weight_decay,
            batch_size: self.pretrain_batch_size,
            seed: self.seed,
        })
    }

    pub fn into_training(&self) -> Result<TrainingConfig> {
        let backbone = self.backbone();
        backbone.validate()?;
        let mut regularizer = RegularizerConfig::for_layers(backbone.num_layers, self.beta, self.mu);
        if let Some(cut) = self.shallow_cutoff {
            regularizer.shallow_cutoff = cut;
        }
        if let Some(deep) = &self.deep_layers {
            regularizer.deep_layers = deep.clone();
        }
        let cfg = TrainingConfig {
            lr_init: self.lr_init,
            lr_min: self.lr_min,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            regularizer,
            gamma0: self.gamma0,
            gamma1: self.gamma1,
            dice_smooth: self.dice_smooth,
            backbone,
            mode: self.mode,
            localization: self.localization,
            regularizers: self.regularizers,
            augment: self.augment,
            early_stop_on: self.early_stop_on,
            val_fraction: self.val_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk-scale settings: 4-layer width-64 backbone on 32px procedural faces.
    pub fn toy() -> Self {
        let b = BackboneConfig::toy();
        Self {
            image_size: b.image_size,
            patch_size: b.patch_size,
            embed_dim: b.embed_dim,
            num_layers: b.num_layers,
            num_heads: b.num_heads,
            mlp_ratio: b.mlp_ratio,
            lr_init: 3e-2,
            lr_min: 1e-5,
            batch_size: 8,
            max_epochs: 60,
            patience: 30,
            pretrain_epochs: 40,
            ..Self::default()
        }
    }
}
