use ghost_autograd::{ops, Ctx, Float, ParamBuilder};
use serde::{Deserialize, Serialize};

use super::cost::{CheapModuleCost, CostTrace, Dims};
use super::layers::{Conv2d, DepthwiseConv2d};
use super::FeatureMap;
use crate::error::{config, contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheapModuleConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub intrinsic_kernel: usize,
    pub cheap_kernel: usize,
}

impl CheapModuleConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self { in_channels, out_channels, intrinsic_kernel: 1, cheap_kernel: 3 }
    }

    pub fn intrinsic_channels(&self) -> usize {
        self.out_channels / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(config("cheap module channel counts must be positive"));
        }
        if self.out_channels % 2 != 0 {
            return Err(config(format!("cheap module output channels must be even, got {}", self.out_channels)));
        }
        for (name, k) in [("intrinsic", self.intrinsic_kernel), ("cheap", self.cheap_kernel)] {
            if k % 2 == 0 {
                return Err(config(format!("cheap module {name} kernel must be odd, got {k}")));
            }
        }
        Ok(())
    }

    /// Multiply-accumulates at an `h x w` resolution.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let m = self.intrinsic_channels();
        (h * w * (self.in_channels * m * self.intrinsic_kernel.pow(2) + m * self.cheap_kernel.pow(2))) as u64
    }

    /// Multiply-accumulates of a dense convolution with the same widths and
    /// the cheap kernel size.
    pub fn dense_equivalent_macs(&self, h: usize, w: usize) -> u64 {
        (h * w * self.in_channels * self.out_channels * self.cheap_kernel.pow(2)) as u64
    }
}

/// Half the outputs from a pointwise convolution (intrinsic maps), the other
/// half from a depthwise convolution of those maps.
#[derive(Clone, Debug)]
pub struct CheapModule {
    pub cfg: CheapModuleConfig,
    pub name: String,
    pub intrinsic: Conv2d,
    pub cheap: DepthwiseConv2d,
}

impl CheapModule {
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, cfg: CheapModuleConfig) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.intrinsic_channels();
        Ok(Self {
            cfg,
            name: pb.prefix().to_string(),
            intrinsic: Conv2d::new(&mut pb.pp("intrinsic"), cfg.in_channels, m, cfg.intrinsic_kernel, 1, true),
            cheap: DepthwiseConv2d::new(&mut pb.pp("cheap"), m, cfg.cheap_kernel, 1, true),
        })
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        if x.channels() != self.cfg.in_channels {
            return Err(config(format!(
                "{}: input has {} channels, module expects {}",
                self.name,
                x.channels(),
                self.cfg.in_channels
            )));
        }
        if x.height() < self.cfg.cheap_kernel || x.width() < self.cfg.cheap_kernel {
            return Err(contract(format!(
                "{}: spatial size {}x{} smaller than the {}x{} cheap kernel",
                self.name,
                x.height(),
                x.width(),
                self.cfg.cheap_kernel,
                self.cfg.cheap_kernel
            )));
        }
        let intrinsic = self.intrinsic.forward(ctx, x.tensor());
        let cheap = self.cheap.forward(ctx, &intrinsic);
        Ok(x.with_tensor(ops::concat_channels(&[&intrinsic, &cheap])))
    }

    pub fn trace(&self, input: Dims, t: &mut CostTrace) -> Dims {
        let before = t.total_macs();
        let mid = self.intrinsic.trace(input, t);
        let out = self.cheap.trace(mid, t).with_c(self.cfg.out_channels);
        t.cheap_modules.push(CheapModuleCost {
            name: self.name.clone(),
            section: t.section(),
            input,
            output: out,
            macs: t.total_macs() - before,
            dense_equivalent_macs: self.cfg.dense_equivalent_macs(input.h, input.w),
        });
        out
    }

    pub fn num_params(&self) -> u64 {
        self.intrinsic.num_params() + self.cheap.num_params()
    }
}
