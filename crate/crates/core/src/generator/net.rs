use ghost_autograd::{ops, Array, Ctx, Float, ParamBuilder, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::GeneratorConfig;
use super::padding::pad_to_multiple;
use crate::blocks::layers::{Conv2d, InstanceNorm};
use crate::blocks::{Backbone, CheapModule, CheapModuleConfig, CostTrace, Dims, FeatureMap, HalfInstanceNorm, Section};
use crate::error::{contract, Result};
use crate::image::{ImageTensor, ValueRange};

/// Cheap module, half instance norm, ReLU.
#[derive(Clone, Debug)]
pub struct CheapStage {
    pub cheap: CheapModule,
    pub hin: HalfInstanceNorm,
}

impl CheapStage {
    fn new<T: Float>(pb: &mut ParamBuilder<T>, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            cheap: CheapModule::new(&mut pb.pp("cheap"), CheapModuleConfig::new(cin, cout))?,
            hin: HalfInstanceNorm::new(&mut pb.pp("hin"), cout, true)?,
        })
    }

    fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let y = self.hin.forward(ctx, &self.cheap.forward(ctx, x)?)?;
        Ok(y.with_tensor(ops::relu(y.tensor())))
    }

    fn trace(&self, d: Dims, t: &mut CostTrace) -> Dims {
        self.cheap.trace(d, t)
    }
}

/// Levels sharing one landing stride, fused by a dense 3x3 convolution.
#[derive(Clone, Debug)]
pub struct FuseStage {
    pub stride: usize,
    /// Pyramid levels, deepest first.
    pub members: Vec<usize>,
    /// `None` for a stride-1 final group that feeds the projection directly.
    pub conv: Option<(Conv2d, InstanceNorm)>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub backbone: Backbone,
    pub laterals: Vec<Conv2d>,
    /// Top-down smoothing for levels `1..L-1`; `None` for the top and the
    /// finest level.
    pub topdown: Vec<Option<CheapStage>>,
    /// Two-stage heads for levels `1..L`; `None` for the finest level.
    pub heads: Vec<Option<(CheapStage, CheapStage)>>,
    pub fuse: Vec<FuseStage>,
    pub project: Conv2d,
}

impl Generator {
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let levels = cfg.levels();
        let (f, hc) = (cfg.fpn_channels, cfg.head_channels);
        let backbone = Backbone::new(&mut pb.pp("backbone"), &cfg.backbone)?;
        let tap_c = cfg.backbone.tap_channels();
        let mut fpn = pb.pp("fpn");
        let laterals = (0..levels)
            .map(|i| Conv2d::new(&mut fpn.pp(format!("lateral.{i}")), tap_c[i], if i == 0 { f / 2 } else { f }, 1, 1, false))
            .collect();
        let topdown = (0..levels)
            .map(|i| {
                (i > 0 && i < levels - 1)
                    .then(|| CheapStage::new(&mut fpn.pp(format!("topdown.{i}")), f, f))
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let heads = (0..levels)
            .map(|i| {
                (i > 0)
                    .then(|| -> Result<_> {
                        let mut hp = fpn.pp(format!("head.{i}"));
                        Ok((CheapStage::new(&mut hp.pp("0"), f, hc)?, CheapStage::new(&mut hp.pp("1"), hc, hc)?))
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;

        let mut head = pb.pp("head");
        let landing = cfg.landing_strides();
        let level_c = cfg.level_output_channels();
        let mut strides: Vec<usize> = landing.clone();
        strides.sort_unstable_by(|a, b| b.cmp(a));
        strides.dedup();
        let mut fuse = Vec::new();
        let mut running = 0;
        for (gi, &s) in strides.iter().enumerate() {
            let members: Vec<usize> = (0..levels).rev().filter(|&i| landing[i] == s).collect();
            let cin = running + members.iter().map(|&i| level_c[i]).sum::<usize>();
            let last = gi == strides.len() - 1;
            let conv = if last && s == 1 {
                running = cin;
                None
            } else {
                let cout = cfg.fuse_channels(s);
                let mut fp = head.pp(format!("fuse.s{s}"));
                let conv = Conv2d::new(&mut fp.pp("conv"), cin, cout, 3, 1, true);
                let norm = InstanceNorm::new(&mut fp.pp("norm"), cout, true);
                running = cout;
                Some((conv, norm))
            };
            fuse.push(FuseStage { stride: s, members, conv });
        }
        let project = Conv2d::new(&mut head.pp("project"), running, 3, 3, 1, true);
        Ok(Self { cfg: cfg.clone(), backbone, laterals, topdown, heads, fuse, project })
    }

    /// Build with weights drawn from a seeded generator.
    pub fn build<T: Float>(cfg: &GeneratorConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Self::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg)?;
        Ok((g, store))
    }

    /// Zero the output projection so the network reduces to the identity.
    pub fn zero_head<T: Float>(&self, store: &mut ParamStore<T>) {
        for id in std::iter::once(self.project.weight).chain(self.project.bias) {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Array::zeros(shape));
        }
    }

    /// `(N, 3, H, W)` batch in `[0, 1]`, `H` and `W` divisible by the
    /// backbone output stride, to a `[0, 1]` batch of the same shape.
    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let levels = self.cfg.levels();
        let net_in = ops::add_scalar(&ops::mul_scalar(x, 2.0), -1.0);
        let taps = self.backbone.forward(ctx, &net_in)?;

        let lat: Vec<FeatureMap<T>> = taps
            .iter()
            .zip(&self.laterals)
            .map(|(t, l)| t.with_tensor(l.forward(ctx, t.tensor())))
            .collect();
        let mut maps: Vec<Option<FeatureMap<T>>> = vec![None; levels];
        maps[levels - 1] = Some(lat[levels - 1].clone());
        for i in (1..levels - 1).rev() {
            let above = maps[i + 1].as_ref().unwrap();
            let up = ops::upsample_nearest(above.tensor(), above.stride() / lat[i].stride());
            let merged = lat[i].with_tensor(ops::add(lat[i].tensor(), &up));
            maps[i] = Some(self.topdown[i].as_ref().unwrap().forward(ctx, &merged)?);
        }
        maps[0] = Some(lat[0].clone());

        let mut outs = Vec::with_capacity(levels);
        for (i, m) in maps.into_iter().enumerate() {
            let m = m.unwrap();
            outs.push(match &self.heads[i] {
                Some((a, b)) => b.forward(ctx, &a.forward(ctx, &m)?)?,
                None => m,
            });
        }

        let mut running: Option<(Tensor<T>, usize)> = None;
        let mut pending: Option<Tensor<T>> = None;
        for stage in &self.fuse {
            let mut parts = Vec::new();
            if let Some((d, ds)) = &running {
                parts.push(ops::upsample_nearest(d, ds / stage.stride));
            }
            for &m in &stage.members {
                parts.push(ops::upsample_nearest(outs[m].tensor(), outs[m].stride() / stage.stride));
            }
            let refs: Vec<&Tensor<T>> = parts.iter().collect();
            let cat = ops::concat_channels(&refs);
            match &stage.conv {
                Some((conv, norm)) => running = Some((ops::relu(&norm.forward(ctx, &conv.forward(ctx, &cat))), stage.stride)),
                None => pending = Some(cat),
            }
        }
        let features = match (pending, running) {
            (Some(cat), _) => cat,
            (None, Some((d, ds))) => ops::upsample_nearest(&d, ds),
            (None, None) => unreachable!("validated config has at least one fuse stage"),
        };
        let residual = ops::tanh(&self.project.forward(ctx, &features));
        let out = if self.cfg.residual_skip {
            ops::add(x, &ops::mul_scalar(&residual, 0.5))
        } else {
            ops::add_scalar(&ops::mul_scalar(&residual, 0.5), 0.5)
        };
        Ok(ops::clamp(&out, 0.0, 1.0))
    }

    /// Deblur one `[0, 1]` RGB image of any size.
    pub fn deblur<T: Float>(&self, store: &ParamStore<T>, img: &ImageTensor) -> Result<ImageTensor> {
        if img.channels() != 3 {
            return Err(contract(format!("generator expects 3 channels, got {}", img.channels())));
        }
        if img.range() != ValueRange::Unit {
            return Err(contract("generator input must be in the [0, 1] domain"));
        }
        img.validate()?;
        let os = self.cfg.backbone.output_stride();
        let (padded, rec) = pad_to_multiple(img, os, 3 * os)?;
        let ctx = Ctx::inference(store);
        let y = self.forward(&ctx, &Tensor::constant(padded.to_array::<T>()))?;
        rec.crop(&ImageTensor::from_array(y.value(), 0, ValueRange::Unit)?)
    }

    /// Analytic per-layer cost for a `c x h x w` input (`h`, `w` already padded).
    pub fn trace(&self, input: Dims) -> Result<CostTrace> {
        let os = self.cfg.backbone.output_stride();
        if input.c != 3 || input.h % os != 0 || input.w % os != 0 || input.h == 0 || input.w == 0 {
            return Err(contract(format!("cost trace needs a 3-channel input divisible by {os}, got {input:?}")));
        }
        let mut t = CostTrace::new();
        t.set_section(Section::Backbone);
        let taps = self.backbone.trace(input, &mut t);
        t.set_section(Section::Fpn);
        let levels = self.cfg.levels();
        let lat: Vec<Dims> = taps.iter().zip(&self.laterals).map(|(&d, l)| l.trace(d, &mut t)).collect();
        let mut maps = lat.clone();
        for i in (1..levels - 1).rev() {
            maps[i] = self.topdown[i].as_ref().unwrap().trace(lat[i], &mut t);
        }
        let mut outs = maps.clone();
        for i in 1..levels {
            let (a, b) = self.heads[i].as_ref().unwrap();
            outs[i] = b.trace(a.trace(maps[i], &mut t), &mut t);
        }
        t.set_section(Section::Head);
        let full = |s: usize| Dims::new(0, input.h / s, input.w / s);
        let mut running: Option<usize> = None;
        let mut final_c = 0;
        for stage in &self.fuse {
            let c = running.unwrap_or(0) + stage.members.iter().map(|&m| outs[m].c).sum::<usize>();
            let d = full(stage.stride).with_c(c);
            match &stage.conv {
                Some((conv, _)) => running = Some(conv.trace(d, &mut t).c),
                None => final_c = c,
            }
        }
        let c = if final_c > 0 { final_c } else { running.unwrap_or(0) };
        self.project.trace(full(1).with_c(c), &mut t);
        Ok(t)
    }
}
