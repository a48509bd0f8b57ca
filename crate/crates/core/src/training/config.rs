use serde::{Deserialize, Serialize};

use crate::adversarial::{DiscriminatorConfig, LossWeights, PerceptualSource};
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;

/// Steps above which a configuration is not considered desk scale.
pub const DESK_SCALE_MAX_STEPS: u64 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Constant for the first half, then linear to zero.
    LinearDecay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadInit {
    /// Output projection drawn like every other convolution.
    Random,
    /// Output projection zeroed: training starts from the identity map.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u64,
    pub images_per_epoch: u64,
    pub batch_size: usize,
    /// Square training patch side.
    pub crop_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Checkpoint cadence in steps; the final step is always saved.
    pub checkpoint_every: u64,
    pub head_init: HeadInit,
    pub loss: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub perceptual: PerceptualSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            images_per_epoch: 200,
            batch_size: 1,
            crop_size: 256,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            lr_schedule: LrSchedule::LinearDecay,
            seed: 0,
            checkpoint_every: 1000,
            head_init: HeadInit::Random,
            loss: LossWeights::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            perceptual: PerceptualSource::default(),
        }
    }
}

impl TrainConfig {
    /// Preset names accepted by [`TrainConfig::preset`].
    pub const PRESETS: [&'static str; 3] = ["smoke", "desk", "full"];

    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        match name {
            "smoke" => Ok(Self {
                epochs: 10,
                images_per_epoch: 20,
                crop_size: 256,
                lr_generator: 1e-3,
                lr_discriminator: 1e-4,
                checkpoint_every: 100,
                head_init: HeadInit::Zero,
                discriminator: DiscriminatorConfig { base_channels: 16, n_layers: 3 },
                perceptual: PerceptualSource::FixedRandom { seed: 0, width_divisor: 8 },
                ..base
            }),
            "desk" => Ok(base),
            "full" => Ok(Self { epochs: 2000, images_per_epoch: 2000, ..base }),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected one of {:?})", Self::PRESETS))),
        }
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.images_per_epoch.div_ceil(self.batch_size.max(1) as u64)
    }

    pub fn total_steps(&self) -> u64 {
        self.epochs * self.steps_per_epoch()
    }

    /// Every problem at once.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.epochs == 0 || self.images_per_epoch == 0 || self.batch_size == 0 {
            p.push("epochs, images_per_epoch and batch_size must be positive".into());
        }
        let os = self.generator.backbone.output_stride();
        if self.crop_size == 0 || self.crop_size % os != 0 {
            p.push(format!("crop_size must be a positive multiple of {os}, got {}", self.crop_size));
        }
        if self.crop_size < 3 * os {
            p.push(format!("crop_size must be at least {} so the deepest level is 3x3 or larger", 3 * os));
        }
        let min_disc = 2 * self.discriminator.receptive_field();
        if self.crop_size < min_disc {
            p.push(format!("crop_size {} is below the {min_disc} pixels the local discriminator needs", self.crop_size));
        }
        for (name, lr) in [("lr_generator", self.lr_generator), ("lr_discriminator", self.lr_discriminator)] {
            if !(lr.is_finite() && lr >= 0.0) {
                p.push(format!("{name} must be finite and >= 0, got {lr}"));
            }
        }
        p.extend(self.loss.problems());
        p.extend(self.generator.problems());
        p.extend(self.discriminator.problems());
        p.extend(self.perceptual.problems());
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(p))
        }
    }

    /// Non-fatal notes about the configuration's scale.
    pub fn warnings(&self) -> Vec<String> {
        let steps = self.total_steps();
        if steps > DESK_SCALE_MAX_STEPS {
            vec![format!("not desk scale: {steps} steps at batch {} would take weeks on a CPU", self.batch_size)]
        } else {
            Vec::new()
        }
    }

    /// Learning-rate multiplier for a zero-based step index.
    pub fn lr_factor(&self, step: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::LinearDecay => {
                let total = self.total_steps();
                let half = total / 2;
                if step < half {
                    1.0
                } else {
                    (total - step.min(total)) as f64 / (total - half).max(1) as f64
                }
            }
        }
    }
}
