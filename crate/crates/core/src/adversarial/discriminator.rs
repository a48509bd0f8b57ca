use ghost_autograd::{ops, Ctx, Float, ParamBuilder, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::layers::{Conv2d, InstanceNorm};
use crate::blocks::{CostTrace, Dims, Section};
use crate::error::{config, contract, Result};

const KERNEL: usize = 4;
const PAD: usize = 2;
const SLOPE: f64 = 0.2;

/// Strided patch discriminator stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    /// Width of the first layer; later layers double up to 8x.
    pub base_channels: usize,
    /// Number of stride-2 layers.
    pub n_layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 64, n_layers: 3 }
    }
}

impl DiscriminatorConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.base_channels == 0 {
            p.push("discriminator.base_channels must be positive".into());
        }
        if self.n_layers == 0 || self.n_layers > 6 {
            p.push(format!("discriminator.n_layers must be in 1..=6, got {}", self.n_layers));
        }
        p
    }

    /// `(cin, cout, stride, normalized)` per convolution.
    fn layers(&self) -> Vec<(usize, usize, usize, bool)> {
        let ndf = self.base_channels;
        let mut out = vec![(3, ndf, 2, false)];
        let mut prev = ndf;
        for n in 1..self.n_layers {
            let c = ndf * (1 << n).min(8);
            out.push((prev, c, 2, true));
            prev = c;
        }
        let c = ndf * (1 << self.n_layers).min(8);
        out.push((prev, c, 1, true));
        out.push((c, 1, 1, false));
        out
    }

    /// Receptive field of one output score, in input pixels.
    pub fn receptive_field(&self) -> usize {
        self.layers().iter().rev().fold(1, |r, &(_, _, s, _)| (r - 1) * s + KERNEL)
    }

    /// Score-map size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        self.layers().iter().fold((h, w), |(h, w), &(_, _, s, _)| {
            let f = |n: usize| (n + 2 * PAD - KERNEL) / s + 1;
            (f(h), f(w))
        })
    }
}

#[derive(Clone, Debug)]
struct DiscLayer {
    conv: Conv2d,
    norm: Option<InstanceNorm>,
    activate: bool,
}

/// Patch discriminator producing an unbounded score map.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    cfg: DiscriminatorConfig,
    layers: Vec<DiscLayer>,
}

impl PatchDiscriminator {
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, cfg: &DiscriminatorConfig) -> Result<Self> {
        let problems = cfg.problems();
        if !problems.is_empty() {
            return Err(config(problems.join("; ")));
        }
        let specs = cfg.layers();
        let last = specs.len() - 1;
        let layers = specs
            .into_iter()
            .enumerate()
            .map(|(i, (cin, cout, stride, norm))| {
                let mut lp = pb.pp(format!("layers.{i}"));
                let conv = Conv2d::with_padding(&mut lp.pp("conv"), cin, cout, KERNEL, stride, PAD, true);
                let norm = norm.then(|| InstanceNorm::new(&mut lp.pp("norm"), cout, false));
                DiscLayer { conv, norm, activate: i != last }
            })
            .collect();
        Ok(Self { cfg: cfg.clone(), layers })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    /// Scores for an `(N, 3, H, W)` batch in `[-1, 1]`.
    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, h, w) = x.dims4();
        let rf = self.cfg.receptive_field();
        if c != 3 {
            return Err(contract(format!("discriminator expects 3 channels, got {c}")));
        }
        if h < rf || w < rf {
            return Err(contract(format!("discriminator input {h}x{w} is smaller than its {rf}x{rf} receptive field")));
        }
        let mut y = x.clone();
        for l in &self.layers {
            y = l.conv.forward(ctx, &y);
            if let Some(n) = &l.norm {
                y = n.forward(ctx, &y);
            }
            if l.activate {
                y = ops::leaky_relu(&y, SLOPE);
            }
        }
        Ok(y)
    }

    pub fn trace(&self, input: Dims, t: &mut CostTrace) -> Dims {
        t.set_section(Section::Discriminator);
        self.layers.iter().fold(input, |d, l| l.conv.trace(d, t))
    }
}

/// Window of the local discriminator, shared by the real and fake batches of
/// one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRecord {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRecord {
    /// Uniformly placed half-height, half-width (quarter-area) window.
    pub fn sample(h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let (ch, cw) = (h / 2, w / 2);
        Self { y0: rng.gen_range(0..=h - ch), x0: rng.gen_range(0..=w - cw), height: ch, width: cw }
    }

    pub fn apply<T: Float>(&self, x: &Tensor<T>) -> Tensor<T> {
        ops::crop(x, self.y0, self.x0, self.height, self.width)
    }
}

#[derive(Clone, Debug)]
pub struct Scores<T: Float> {
    pub global: Tensor<T>,
    pub local: Tensor<T>,
}

/// Full-image and quarter-area patch critics.
#[derive(Clone, Debug)]
pub struct DiscriminatorPair {
    pub global: PatchDiscriminator,
    pub local: PatchDiscriminator,
}

impl DiscriminatorPair {
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, cfg: &DiscriminatorConfig) -> Result<Self> {
        Ok(Self {
            global: PatchDiscriminator::new(&mut pb.pp("global"), cfg)?,
            local: PatchDiscriminator::new(&mut pb.pp("local"), cfg)?,
        })
    }

    pub fn build<T: Float>(cfg: &DiscriminatorConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = Self::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg)?;
        Ok((pair, store))
    }

    /// Smallest image side the pair accepts, given the local crop halves it.
    pub fn min_input_size(&self) -> usize {
        2 * self.local.cfg.receptive_field()
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &Tensor<T>, crop: &CropRecord) -> Result<Scores<T>> {
        Ok(Scores { global: self.global.forward(ctx, x)?, local: self.local.forward(ctx, &crop.apply(x))? })
    }
}
