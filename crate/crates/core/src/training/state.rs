use std::collections::BTreeMap;

use ghost_autograd::{ops, Adam, AdamConfig, AdamState, Array, Ctx, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{HeadInit, TrainConfig};
use crate::adversarial::{
    ragan_ls_multi, total_generator_loss, CropRecord, DiscriminatorPair, LossBreakdown, PerceptualExtractor,
};
use crate::checkpoint::{Checkpoint, CheckpointKind, TensorData, GENERATOR_PREFIX};
use crate::error::{contract, Error, Result};
use crate::generator::{diff_serialized, Generator};

pub const DISC_PREFIX: &str = "disc.";
const ADAM_G: &str = "adam_g";
const ADAM_D: &str = "adam_d";
const META_STEP: &str = "step";
const META_TRAIN_CONFIG: &str = "train_config";
const META_PERCEPTUAL: &str = "perceptual_features";

/// Independent random streams derived from the run seed.
#[derive(Clone, Copy)]
#[repr(u64)]
pub(crate) enum Stream {
    GeneratorInit = 1,
    DiscriminatorInit = 2,
    DataOrder = 3,
    DataCrop = 4,
    LocalCrop = 5,
}

/// Seed for `(stream, index)` under the run seed.
pub(crate) fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut z = seed ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// One training batch, `(N, 3, S, S)` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub blurred: Array<f32>,
    pub sharp: Array<f32>,
}

/// Losses of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Number of completed steps including this one.
    pub step: u64,
    pub d_loss: f64,
    /// Weighted total generator objective.
    pub g_loss: f64,
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

impl StepRecord {
    /// Everything except the wall-clock timestamp.
    pub fn losses(&self) -> [f64; 7] {
        [self.step as f64, self.d_loss, self.g_loss, self.pixel, self.perceptual, self.adversarial, self.lr_generator]
    }

    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown { pixel: self.pixel, perceptual: self.perceptual, adversarial: self.adversarial, total: self.g_loss }
    }
}

fn to_net(x: &Tensor<f32>) -> Tensor<f32> {
    ops::add_scalar(&ops::mul_scalar(x, 2.0), -1.0)
}

/// Networks, optimizers and progress of a run.
pub struct TrainState {
    pub cfg: TrainConfig,
    pub generator: Generator,
    pub gen_store: ParamStore<f32>,
    pub discs: DiscriminatorPair,
    pub disc_store: ParamStore<f32>,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub extractor: PerceptualExtractor<f32>,
    /// Completed steps.
    pub step: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = stream_rng(cfg.seed, Stream::GeneratorInit, 0);
        let mut gen_store = ParamStore::new();
        let generator = Generator::new(&mut ghost_autograd::ParamBuilder::new(&mut gen_store, &mut init), &cfg.generator)?;
        if cfg.head_init == HeadInit::Zero {
            generator.zero_head(&mut gen_store);
        }
        let mut init = stream_rng(cfg.seed, Stream::DiscriminatorInit, 0);
        let mut disc_store = ParamStore::new();
        let discs = DiscriminatorPair::new(&mut ghost_autograd::ParamBuilder::new(&mut disc_store, &mut init), &cfg.discriminator)?;
        Ok(Self {
            cfg: cfg.clone(),
            generator,
            gen_store,
            discs,
            disc_store,
            adam_g: Adam::new(AdamConfig::default()),
            adam_d: Adam::new(AdamConfig::default()),
            extractor: PerceptualExtractor::from_source(&cfg.perceptual)?,
            step: 0,
        })
    }

    fn diverged(&self, what: impl Into<String>) -> Error {
        Error::TrainingDiverged { step: self.step + 1, what: what.into(), last_good: None }
    }

    /// One discriminator update on both scales, then one generator update.
    pub fn training_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let (n, c, h, w) = batch.blurred.dims4();
        if n == 0 || c != 3 || batch.sharp.shape() != batch.blurred.shape() {
            return Err(contract(format!(
                "batch must be non-empty aligned (N, 3, H, W) pairs, got {:?} and {:?}",
                batch.blurred.shape(),
                batch.sharp.shape()
            )));
        }
        let factor = self.cfg.lr_factor(self.step);
        let (lr_g, lr_d) = (self.cfg.lr_generator * factor, self.cfg.lr_discriminator * factor);
        let crop = CropRecord::sample(h, w, &mut stream_rng(self.cfg.seed, Stream::LocalCrop, self.step));
        let blurred = Tensor::constant(batch.blurred.clone());
        let sharp = Tensor::constant(batch.sharp.clone());
        let real_net = to_net(&sharp);

        let ctx_g = Ctx::training(&self.gen_store);
        let pred = self.generator.forward(&ctx_g, &blurred)?;
        if !pred.value().all_finite() {
            return Err(self.diverged("generator output"));
        }
        let fake_net = to_net(&pred);

        let (d_loss, d_grads) = {
            let ctx_d = Ctx::training(&self.disc_store);
            let real = self.discs.forward(&ctx_d, &real_net, &crop)?;
            let fake = self.discs.forward(&ctx_d, &fake_net.detach(), &crop)?;
            let l = ragan_ls_multi(&[(&real.global, &fake.global), (&real.local, &fake.local)])
                .map_err(|_| self.diverged("discriminator scores"))?;
            let d = l.d_loss.item();
            if !d.is_finite() {
                return Err(self.diverged("discriminator loss"));
            }
            (d, l.d_loss.backward())
        };
        self.adam_d.step(&mut self.disc_store, &d_grads, lr_d);

        let (breakdown, g_grads) = {
            let ctx_d = Ctx::new(&self.disc_store, true, false);
            let real = self.discs.forward(&ctx_d, &real_net, &crop)?;
            let fake = self.discs.forward(&ctx_d, &fake_net, &crop)?;
            let adv = ragan_ls_multi(&[(&real.global, &fake.global), (&real.local, &fake.local)])
                .map_err(|_| self.diverged("discriminator scores"))?;
            let pixel = ops::mse(&pred, &sharp);
            let perceptual = self.extractor.loss(&pred, &sharp)?;
            let (total, breakdown) = total_generator_loss(&pixel, &perceptual, &adv.g_loss, &self.cfg.loss)
                .map_err(|e| self.diverged(e.to_string()))?;
            if !breakdown.total.is_finite() {
                return Err(self.diverged("generator loss"));
            }
            (breakdown, total.backward())
        };
        let buffers = ctx_g.take_buffer_updates();
        drop(ctx_g);
        self.adam_g.step(&mut self.gen_store, &g_grads, lr_g);
        for (id, v) in buffers {
            self.gen_store.set(id, v);
        }
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            d_loss,
            g_loss: breakdown.total,
            pixel: breakdown.pixel,
            perceptual: breakdown.perceptual,
            adversarial: breakdown.adversarial,
            lr_generator: lr_g,
            lr_discriminator: lr_d,
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(CheckpointKind::Training, self.cfg.generator.clone());
        c.insert_store(GENERATOR_PREFIX, &self.gen_store);
        c.insert_store(DISC_PREFIX, &self.disc_store);
        for (prefix, state) in [(ADAM_G, self.adam_g.export(&self.gen_store)), (ADAM_D, self.adam_d.export(&self.disc_store))] {
            c.metadata.insert(format!("{prefix}_step"), state.step.to_string());
            for (name, m, v) in state.moments {
                let shape = vec![m.len()];
                c.tensors.insert(format!("{prefix}.m.{name}"), TensorData::F64 { shape: shape.clone(), data: m });
                c.tensors.insert(format!("{prefix}.v.{name}"), TensorData::F64 { shape, data: v });
            }
        }
        c.metadata.insert(META_STEP.into(), self.step.to_string());
        c.metadata.insert(META_TRAIN_CONFIG.into(), serde_json::to_string(&self.cfg)?);
        c.metadata.insert(META_PERCEPTUAL.into(), self.extractor.descriptor().to_string());
        Ok(c)
    }

    /// Training configuration embedded in a training checkpoint.
    pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<TrainConfig> {
        if ckpt.kind != CheckpointKind::Training {
            return Err(Error::Checkpoint("generator-only checkpoint cannot resume training".into()));
        }
        let text = ckpt
            .metadata
            .get(META_TRAIN_CONFIG)
            .ok_or_else(|| Error::Checkpoint("training checkpoint lacks its configuration".into()))?;
        Ok(serde_json::from_str(text)?)
    }

    /// Restore a run. `cfg` may differ from the stored configuration only in
    /// `epochs` and `checkpoint_every`.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        let stored = Self::checkpoint_config(ckpt)?;
        let comparable = TrainConfig { epochs: cfg.epochs, checkpoint_every: cfg.checkpoint_every, ..stored };
        let diff = diff_serialized(cfg, &comparable);
        if !diff.is_empty() {
            let lines: Vec<String> = diff.iter().map(|d| format!("  requested vs checkpoint: {d}")).collect();
            return Err(Error::ConfigMismatch(lines.join("\n")));
        }
        let mut state = Self::new(cfg)?;
        ckpt.load_store(GENERATOR_PREFIX, &mut state.gen_store)?;
        ckpt.load_store(DISC_PREFIX, &mut state.disc_store)?;
        let adam = |prefix: &str, store: &ParamStore<f32>| -> Result<Adam> {
            let step = ckpt
                .metadata
                .get(&format!("{prefix}_step"))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing {prefix} step counter")))?;
            let mut moments = Vec::new();
            let mpre = format!("{prefix}.m.");
            let found: BTreeMap<&str, &TensorData> =
                ckpt.tensors.iter().filter_map(|(k, v)| k.strip_prefix(&mpre).map(|n| (n, v))).collect();
            for (name, m) in found {
                let v = ckpt
                    .tensors
                    .get(&format!("{prefix}.v.{name}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing second moment for {name}")))?;
                moments.push((name.to_string(), m.to_f64(), v.to_f64()));
            }
            Ok(Adam::import(AdamConfig::default(), store, &AdamState { step, moments })?)
        };
        state.adam_g = adam(ADAM_G, &state.gen_store)?;
        state.adam_d = adam(ADAM_D, &state.disc_store)?;
        state.step = ckpt
            .metadata
            .get(META_STEP)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing step counter".into()))?;
        Ok(state)
    }
}
