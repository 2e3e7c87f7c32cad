use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::preprocess::ElasticParams;
use crate::synthetic::DatasetManifest;

/// Everything one training run needs besides the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub variant: Variant,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Weight of the segmentation term in the joint loss.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default)]
    pub seed: u64,
    /// Apply elastic deformation to training samples each epoch. The
    /// ground-truth cloud is re-extracted from the deformed mask.
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub elastic: ElasticParams,
    #[serde(default = "default_encoder_channels")]
    pub encoder_channels: Vec<usize>,
    #[serde(default = "default_pointnet_channels")]
    pub pointnet_channels: [usize; 3],
    #[serde(default = "default_true")]
    pub unit_offset_skips: bool,
    #[serde(default)]
    pub feed_gt_cloud: bool,
    /// Print per-epoch progress to stderr.
    #[serde(skip)]
    pub verbose: bool,
}

fn default_lr() -> f64 {
    1e-4
}

fn default_lambda() -> f64 {
    crate::losses::DEFAULT_LAMBDA
}

fn default_epochs() -> usize {
    40
}

fn default_batch_size() -> usize {
    2
}

fn default_patience() -> usize {
    10
}

fn default_encoder_channels() -> Vec<usize> {
    vec![16, 32, 64, 128]
}

fn default_pointnet_channels() -> [usize; 3] {
    [32, 128, 512]
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(variant: Variant) -> Self {
        ExperimentConfig {
            variant,
            learning_rate: default_lr(),
            lambda: default_lambda(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            early_stop_patience: default_patience(),
            seed: 0,
            augment: false,
            elastic: ElasticParams::default(),
            encoder_channels: default_encoder_channels(),
            pointnet_channels: default_pointnet_channels(),
            unit_offset_skips: true,
            feed_gt_cloud: false,
            verbose: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Derives the model configuration for a given dataset; the grid shape
    /// and cloud size come from the manifest.
    pub fn model_config(&self, manifest: &DatasetManifest, seed: u64) -> ModelConfig {
        let (x, y, z) = manifest.grid_shape;
        let mut cfg = ModelConfig::new(self.variant, [x, y, z], manifest.n_points, seed);
        cfg.encoder_channels = self.encoder_channels.clone();
        cfg.pointnet_channels = self.pointnet_channels;
        cfg.unit_offset_skips = self.unit_offset_skips;
        cfg.feed_gt_cloud = self.feed_gt_cloud;
        cfg
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = ExperimentConfig::new(Variant::Pcunet3d);
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.lambda, 0.001);
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.early_stop_patience, 10);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.variant, cfg.variant);
        assert_eq!(back.epochs, cfg.epochs);
    }

    #[test]
    fn minimal_json_fills_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"variant":"unet_vol3d"}"#).unwrap();
        assert_eq!(cfg.variant, Variant::UnetVol3d);
        assert_eq!(cfg.epochs, 40);
        assert!(cfg.unit_offset_skips);
        assert!(!cfg.augment);
    }

    #[test]
    fn bad_values_rejected() {
        let mut cfg = ExperimentConfig::new(Variant::Pcunet3d);
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::new(Variant::Pcunet3d);
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }
}
