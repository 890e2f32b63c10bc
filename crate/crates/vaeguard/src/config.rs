//! Run configuration: a flat TOML document whose every key can be overridden
//! by a CLI flag. Precedence: flag > config file > built-in default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackBudget, InitMode, LatentTap};
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::rng::fnv1a64;
use crate::trainer::{PixelLoss, TrainConfig};
use crate::vae::VaeConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // dataset
    pub data_root: Option<PathBuf>,
    /// Square target resolution.
    pub resolution: usize,
    pub channels: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub split_seed: u64,
    // model
    pub stage_channels: Vec<usize>,
    pub latent_channels: usize,
    // optimization
    pub total_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub orig_weight: f64,
    pub lpips_weight: f64,
    pub kl_weight: f64,
    /// "l2" (default) or "l1" pixel term for pretraining.
    pub pixel_loss: String,
    pub freeze_decoder: bool,
    pub seed: u64,
    pub checkpoint_every: usize,
    // attack ball
    pub epsilon: f64,
    pub attack_step_size: f64,
    pub attack_iterations: usize,
    /// "zero" (default) or "uniform-random".
    pub attack_init: String,
    /// "mean" (default) or "sample".
    pub attack_latent: String,
    // perceptual extractor
    pub perceptual_seed: u64,
    /// Optional pretrained feature archive; replaces the seeded extractor.
    pub perceptual_weights: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: None,
            resolution: 32,
            channels: 3,
            train_fraction: 0.9,
            val_fraction: 0.1,
            split_seed: 7,
            stage_channels: vec![32, 64, 128],
            latent_channels: 4,
            total_steps: 5000,
            batch_size: 20,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            orig_weight: 0.01,
            lpips_weight: 1.0,
            kl_weight: 1e-6,
            pixel_loss: "l2".into(),
            freeze_decoder: true,
            seed: 0,
            checkpoint_every: 1000,
            epsilon: 8.0 / 255.0,
            attack_step_size: 0.02,
            attack_iterations: 10,
            attack_init: "zero".into(),
            attack_latent: "mean".into(),
            perceptual_seed: 7777,
            perceptual_weights: None,
        }
    }
}

/// CLI-side overrides; `None` keeps the config/default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_root: Option<PathBuf>,
    pub resolution: Option<usize>,
    pub channels: Option<usize>,
    pub train_fraction: Option<f64>,
    pub val_fraction: Option<f64>,
    pub split_seed: Option<u64>,
    pub stage_channels: Option<Vec<usize>>,
    pub latent_channels: Option<usize>,
    pub total_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub orig_weight: Option<f64>,
    pub lpips_weight: Option<f64>,
    pub kl_weight: Option<f64>,
    pub pixel_loss: Option<String>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<usize>,
    pub epsilon: Option<f64>,
    pub attack_step_size: Option<f64>,
    pub attack_iterations: Option<usize>,
    pub attack_init: Option<String>,
    pub attack_latent: Option<String>,
    pub perceptual_seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("bad config {}: {e}", p.display())))
            }
        }
    }

    pub fn apply(&mut self, ov: &Overrides) {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &ov.$field {
                    self.$field = v.clone();
                }
            };
        }
        if let Some(v) = &ov.data_root {
            self.data_root = Some(v.clone());
        }
        take!(resolution);
        take!(channels);
        take!(train_fraction);
        take!(val_fraction);
        take!(split_seed);
        take!(stage_channels);
        take!(latent_channels);
        take!(total_steps);
        take!(batch_size);
        take!(learning_rate);
        take!(weight_decay);
        take!(orig_weight);
        take!(lpips_weight);
        take!(kl_weight);
        take!(pixel_loss);
        take!(seed);
        take!(checkpoint_every);
        take!(epsilon);
        take!(attack_step_size);
        take!(attack_iterations);
        take!(attack_init);
        take!(attack_latent);
        take!(perceptual_seed);
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let root = self
            .data_root
            .clone()
            .ok_or_else(|| Error::Config("data_root is required (flag or config key)".into()))?;
        Ok(DatasetSpec {
            root,
            resolution: (self.resolution, self.resolution),
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            split_seed: self.split_seed,
            channels: self.channels,
        })
    }

    pub fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            in_channels: self.channels,
            stage_channels: self.stage_channels.clone(),
            latent_channels: self.latent_channels,
        }
    }

    pub fn attack_budget(&self) -> Result<AttackBudget> {
        let init = match self.attack_init.as_str() {
            "zero" => InitMode::Zero,
            "uniform-random" => InitMode::UniformRandom,
            other => {
                return Err(Error::Config(format!(
                    "attack_init must be \"zero\" or \"uniform-random\", got \"{other}\""
                )))
            }
        };
        let budget = AttackBudget {
            epsilon: self.epsilon,
            step_size: self.attack_step_size,
            iterations: self.attack_iterations,
            init,
            rng_seed: self.seed,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn latent_tap(&self) -> Result<LatentTap> {
        match self.attack_latent.as_str() {
            "mean" => Ok(LatentTap::Mean),
            "sample" => Ok(LatentTap::Sample),
            other => Err(Error::Config(format!(
                "attack_latent must be \"mean\" or \"sample\", got \"{other}\""
            ))),
        }
    }

    pub fn pixel_loss_kind(&self) -> Result<PixelLoss> {
        match self.pixel_loss.as_str() {
            "l2" => Ok(PixelLoss::L2),
            "l1" => Ok(PixelLoss::L1),
            other => Err(Error::Config(format!(
                "pixel_loss must be \"l2\" or \"l1\", got \"{other}\""
            ))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            total_steps: self.total_steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            orig_weight: self.orig_weight,
            lpips_weight: self.lpips_weight,
            kl_weight: self.kl_weight,
            attack: self.attack_budget()?,
            attack_latent: self.latent_tap()?,
            pixel_loss: self.pixel_loss_kind()?,
            freeze_decoder: self.freeze_decoder,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON snapshot of the resolved configuration.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Short fingerprint used in run-directory names.
    pub fn short_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:08x}", fnv1a64(json.as_bytes()) as u32)
    }
}
