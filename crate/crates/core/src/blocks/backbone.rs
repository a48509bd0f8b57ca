use ghost_autograd::{ops, Ctx, Float, ParamBuilder, Tensor};
use serde::{Deserialize, Serialize};

use super::cost::{CostTrace, Dims};
use super::layers::{BatchNorm, Conv2d, DepthwiseConv2d};
use super::FeatureMap;
use crate::error::{contract, Error, Result};

/// One Ghost bottleneck: kernel of the strided depthwise stage, hidden
/// (expanded) width, output width, squeeze-excitation ratio, stride.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageSpec {
    pub kernel: usize,
    pub hidden: usize,
    pub out: usize,
    pub se_ratio: f64,
    pub stride: usize,
}

const fn s(kernel: usize, hidden: usize, out: usize, se_ratio: f64, stride: usize) -> StageSpec {
    StageSpec { kernel, hidden, out, se_ratio, stride }
}

/// GhostNet 1.0x bottleneck table, one entry per feature block.
pub const GHOST_STAGES: [&[StageSpec]; 9] = [
    &[s(3, 16, 16, 0.0, 1)],
    &[s(3, 48, 24, 0.0, 2)],
    &[s(3, 72, 24, 0.0, 1)],
    &[s(5, 72, 40, 0.25, 2)],
    &[s(5, 120, 40, 0.25, 1)],
    &[s(3, 240, 80, 0.0, 2)],
    &[s(3, 200, 80, 0.0, 1), s(3, 184, 80, 0.0, 1), s(3, 184, 80, 0.0, 1), s(3, 480, 112, 0.25, 1), s(3, 672, 112, 0.25, 1)],
    &[s(5, 672, 160, 0.25, 2)],
    &[s(5, 960, 160, 0.0, 1), s(5, 960, 160, 0.25, 1), s(5, 960, 160, 0.0, 1), s(5, 960, 160, 0.25, 1)],
];

const STEM_CHANNELS: usize = 16;

/// Round `v` to a multiple of `divisor`, never dropping more than 10%.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut n = (((v + d / 2.0) / d).floor() * d).max(d);
    if n < 0.9 * v {
        n += d;
    }
    n as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub width_multiplier: f64,
    pub num_feature_blocks: usize,
    /// Feature blocks whose outputs feed the pyramid, shallow to deep.
    pub tap_stages: Vec<usize>,
    pub final_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { width_multiplier: 1.0, num_feature_blocks: 8, tap_stages: vec![0, 2, 4, 6, 7], final_channels: 160 }
    }
}

impl BackboneConfig {
    pub fn stem_channels(&self) -> usize {
        make_divisible(STEM_CHANNELS as f64 * self.width_multiplier, 4)
    }

    /// Output width of every preserved block.
    pub fn block_channels(&self) -> Vec<usize> {
        GHOST_STAGES[..self.num_feature_blocks.min(GHOST_STAGES.len())]
            .iter()
            .map(|stage| make_divisible(stage.last().unwrap().out as f64 * self.width_multiplier, 4))
            .collect()
    }

    /// Cumulative stride after every preserved block (the stem halves).
    pub fn block_strides(&self) -> Vec<usize> {
        let mut stride = 2;
        GHOST_STAGES[..self.num_feature_blocks.min(GHOST_STAGES.len())]
            .iter()
            .map(|stage| {
                stride *= stage.iter().map(|b| b.stride).product::<usize>();
                stride
            })
            .collect()
    }

    pub fn tap_channels(&self) -> Vec<usize> {
        let c = self.block_channels();
        self.tap_stages.iter().map(|&i| c[i]).collect()
    }

    pub fn tap_strides(&self) -> Vec<usize> {
        let s = self.block_strides();
        self.tap_stages.iter().map(|&i| s[i]).collect()
    }

    /// Total downsampling of the deepest block.
    pub fn output_stride(&self) -> usize {
        self.block_strides().last().copied().unwrap_or(1)
    }

    /// Every problem with this configuration.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            p.push(format!("backbone.width_multiplier must be positive, got {}", self.width_multiplier));
        }
        if self.num_feature_blocks == 0 || self.num_feature_blocks > GHOST_STAGES.len() {
            p.push(format!("backbone.num_feature_blocks must be in 1..={}, got {}", GHOST_STAGES.len(), self.num_feature_blocks));
            return p;
        }
        if self.tap_stages.is_empty() {
            p.push("backbone.tap_stages must not be empty".into());
        }
        if self.tap_stages.windows(2).any(|w| w[0] >= w[1]) {
            p.push(format!("backbone.tap_stages must be strictly increasing, got {:?}", self.tap_stages));
        }
        if let Some(&bad) = self.tap_stages.iter().find(|&&t| t >= self.num_feature_blocks) {
            p.push(format!("backbone.tap_stages entry {bad} out of range for {} blocks", self.num_feature_blocks));
        } else if self.tap_stages.last() != Some(&(self.num_feature_blocks - 1)) {
            p.push("backbone.tap_stages must end with the final block".into());
        } else if self.tap_strides().windows(2).any(|w| w[0] >= w[1]) {
            p.push(format!("backbone taps {:?} have repeated strides {:?}", self.tap_stages, self.tap_strides()));
        }
        if self.width_multiplier.is_finite() && self.width_multiplier > 0.0 {
            let last = *self.block_channels().last().unwrap();
            if last != self.final_channels {
                p.push(format!("backbone.final_channels is {} but the final block produces {last}", self.final_channels));
            }
        }
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
}

/// Ghost module with batch norm: a 1x1 primary convolution and a depthwise
/// 3x3 cheap operation on its output.
#[derive(Clone, Debug)]
pub struct GhostModule {
    pub out: usize,
    pub relu: bool,
    pub primary: Conv2d,
    pub primary_bn: BatchNorm,
    pub cheap: DepthwiseConv2d,
    pub cheap_bn: BatchNorm,
}

impl GhostModule {
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, cin: usize, out: usize, relu: bool) -> Self {
        let init = out.div_ceil(2);
        Self {
            out,
            relu,
            primary: Conv2d::new(&mut pb.pp("primary.conv"), cin, init, 1, 1, false),
            primary_bn: BatchNorm::new(&mut pb.pp("primary.bn"), init),
            cheap: DepthwiseConv2d::new(&mut pb.pp("cheap.conv"), init, 3, 1, false),
            cheap_bn: BatchNorm::new(&mut pb.pp("cheap.bn"), init),
        }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &Tensor<T>) -> Tensor<T> {
        let act = |t: Tensor<T>| if self.relu { ops::relu(&t) } else { t };
        let x1 = act(self.primary_bn.forward(ctx, &self.primary.forward(ctx, x)));
        let x2 = act(self.cheap_bn.forward(ctx, &self.cheap.forward(ctx, &x1)));
        let y = ops::concat_channels(&[&x1, &x2]);
        if 2 * x1.shape()[1] == self.out {
            y
        } else {
            ops::narrow_channels(&y, 0, self.out)
        }
    }

    pub fn trace(&self, input: Dims, t: &mut CostTrace) -> Dims {
        let mid = self.primary.trace(input, t);
        self.cheap.trace(mid, t);
        mid.with_c(self.out)
    }
}

#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

impl SqueezeExcite {
    fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &Tensor<T>) -> Tensor<T> {
        let s = ops::global_avg_pool(x);
        let s = ops::relu(&self.reduce.forward(ctx, &s));
        let gate = ops::hard_sigmoid(&self.expand.forward(ctx, &s));
        ops::mul_channels(x, &gate)
    }

    fn trace(&self, input: Dims, t: &mut CostTrace) {
        let pooled = Dims::new(input.c, 1, 1);
        let r = self.reduce.trace(pooled, t);
        self.expand.trace(r, t);
    }
}

#[derive(Clone, Debug)]
pub struct Shortcut {
    pub dw: DepthwiseConv2d,
    pub dw_bn: BatchNorm,
    pub pw: Conv2d,
    pub pw_bn: BatchNorm,
}

#[derive(Clone, Debug)]
pub struct GhostBottleneck {
    pub ghost1: GhostModule,
    pub downsample: Option<(DepthwiseConv2d, BatchNorm)>,
    pub se: Option<SqueezeExcite>,
    pub ghost2: GhostModule,
    pub shortcut: Option<Shortcut>,
}

impl GhostBottleneck {
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, cin: usize, spec: &StageSpec, width: f64) -> Self {
        let mid = make_divisible(spec.hidden as f64 * width, 4);
        let out = make_divisible(spec.out as f64 * width, 4);
        let downsample = (spec.stride > 1).then(|| {
            (
                DepthwiseConv2d::new(&mut pb.pp("dw.conv"), mid, spec.kernel, spec.stride, false),
                BatchNorm::new(&mut pb.pp("dw.bn"), mid),
            )
        });
        let se = (spec.se_ratio > 0.0).then(|| {
            let reduced = make_divisible(mid as f64 * spec.se_ratio, 4);
            SqueezeExcite {
                reduce: Conv2d::new(&mut pb.pp("se.reduce"), mid, reduced, 1, 1, true),
                expand: Conv2d::new(&mut pb.pp("se.expand"), reduced, mid, 1, 1, true),
            }
        });
        let shortcut = (cin != out || spec.stride > 1).then(|| Shortcut {
            dw: DepthwiseConv2d::new(&mut pb.pp("shortcut.dw.conv"), cin, spec.kernel, spec.stride, false),
            dw_bn: BatchNorm::new(&mut pb.pp("shortcut.dw.bn"), cin),
            pw: Conv2d::new(&mut pb.pp("shortcut.pw.conv"), cin, out, 1, 1, false),
            pw_bn: BatchNorm::new(&mut pb.pp("shortcut.pw.bn"), out),
        });
        Self {
            ghost1: GhostModule::new(&mut pb.pp("ghost1"), cin, mid, true),
            downsample,
            se,
            ghost2: GhostModule::new(&mut pb.pp("ghost2"), mid, out, false),
            shortcut,
        }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.ghost1.forward(ctx, x);
        if let Some((dw, bn)) = &self.downsample {
            y = bn.forward(ctx, &dw.forward(ctx, &y));
        }
        if let Some(se) = &self.se {
            y = se.forward(ctx, &y);
        }
        y = self.ghost2.forward(ctx, &y);
        let residual = match &self.shortcut {
            None => x.clone(),
            Some(s) => {
                let r = s.dw_bn.forward(ctx, &s.dw.forward(ctx, x));
                s.pw_bn.forward(ctx, &s.pw.forward(ctx, &r))
            }
        };
        ops::add(&y, &residual)
    }

    pub fn trace(&self, input: Dims, t: &mut CostTrace) -> Dims {
        let mut d = self.ghost1.trace(input, t);
        if let Some((dw, _)) = &self.downsample {
            d = dw.trace(d, t);
        }
        if let Some(se) = &self.se {
            se.trace(d, t);
        }
        let out = self.ghost2.trace(d, t);
        if let Some(s) = &self.shortcut {
            let r = s.dw.trace(input, t);
            s.pw.trace(r, t);
        }
        out
    }
}

/// Stem convolution followed by the preserved Ghost bottleneck blocks.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub stem: Conv2d,
    pub stem_bn: BatchNorm,
    pub blocks: Vec<Vec<GhostBottleneck>>,
}

impl Backbone {
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let stem_c = cfg.stem_channels();
        let stem = Conv2d::new(&mut pb.pp("stem.conv"), 3, stem_c, 3, 2, false);
        let stem_bn = BatchNorm::new(&mut pb.pp("stem.bn"), stem_c);
        let mut cin = stem_c;
        let mut blocks = Vec::new();
        for (i, stage) in GHOST_STAGES[..cfg.num_feature_blocks].iter().enumerate() {
            let mut layers = Vec::new();
            for (j, spec) in stage.iter().enumerate() {
                let b = GhostBottleneck::new(&mut pb.pp(format!("blocks.{i}.{j}")), cin, spec, cfg.width_multiplier);
                cin = b.ghost2.out;
                layers.push(b);
            }
            blocks.push(layers);
        }
        Ok(Self { cfg: cfg.clone(), stem, stem_bn, blocks })
    }

    /// Taps for a network-domain batch `(N, 3, H, W)` with `H` and `W`
    /// divisible by the output stride.
    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &Tensor<T>) -> Result<Vec<FeatureMap<T>>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(contract(format!("backbone expects (N, 3, H, W), got {shape:?}")));
        }
        let os = self.cfg.output_stride();
        if shape[2] % os != 0 || shape[3] % os != 0 {
            return Err(contract(format!("input {}x{} not divisible by {os}; pad first", shape[2], shape[3])));
        }
        let strides = self.cfg.block_strides();
        let mut y = ops::relu(&self.stem_bn.forward(ctx, &self.stem.forward(ctx, x)));
        let mut taps = Vec::with_capacity(self.cfg.tap_stages.len());
        for (i, stage) in self.blocks.iter().enumerate() {
            for b in stage {
                y = b.forward(ctx, &y);
            }
            if self.cfg.tap_stages.contains(&i) {
                taps.push(FeatureMap::new(y.clone(), strides[i])?);
            }
        }
        Ok(taps)
    }

    pub fn trace(&self, input: Dims, t: &mut CostTrace) -> Vec<Dims> {
        let mut d = self.stem.trace(input, t);
        let mut taps = Vec::new();
        for (i, stage) in self.blocks.iter().enumerate() {
            for b in stage {
                d = b.trace(d, t);
            }
            if self.cfg.tap_stages.contains(&i) {
                taps.push(d);
            }
        }
        taps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_divisible_matches_reference_rounding() {
        assert_eq!(make_divisible(16.0, 4), 16);
        assert_eq!(make_divisible(18.0, 4), 20);
        assert_eq!(make_divisible(72.0 * 0.25, 4), 20);
        assert_eq!(make_divisible(120.0 * 0.25, 4), 32);
        assert_eq!(make_divisible(1.0, 4), 4);
        assert_eq!(make_divisible(10.0, 8), 16); // would drop >10% at 8
    }

    #[test]
    fn canonical_taps() {
        let cfg = BackboneConfig::default();
        assert!(cfg.problems().is_empty());
        assert_eq!(cfg.tap_channels(), vec![16, 24, 40, 112, 160]);
        assert_eq!(cfg.tap_strides(), vec![2, 4, 8, 16, 32]);
    }

    #[test]
    fn problems_are_collected() {
        let cfg = BackboneConfig { tap_stages: vec![2, 1], final_channels: 960, ..Default::default() };
        let p = cfg.problems();
        assert!(p.len() >= 2, "{p:?}");
    }
}
