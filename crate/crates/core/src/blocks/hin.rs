use ghost_autograd::{ops, Ctx, Float, ParamBuilder};

use super::layers::InstanceNorm;
use super::FeatureMap;
use crate::error::{config, Result};

/// Instance-normalizes the first half of the channels and passes the second
/// half through untouched.
#[derive(Clone, Debug)]
pub struct HalfInstanceNorm {
    pub channels: usize,
    pub norm: InstanceNorm,
}

impl HalfInstanceNorm {
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, channels: usize, affine: bool) -> Result<Self> {
        if channels == 0 || channels % 2 != 0 {
            return Err(config(format!("half instance norm needs a positive even channel count, got {channels}")));
        }
        Ok(Self { channels, norm: InstanceNorm::new(pb, channels / 2, affine) })
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        if x.channels() != self.channels {
            return Err(config(format!("half instance norm built for {} channels, got {}", self.channels, x.channels())));
        }
        let half = self.channels / 2;
        let normalized = self.norm.forward(ctx, &ops::narrow_channels(x.tensor(), 0, half));
        let passthrough = ops::narrow_channels(x.tensor(), half, half);
        Ok(x.with_tensor(ops::concat_channels(&[&normalized, &passthrough])))
    }

    pub fn num_params(&self) -> u64 {
        self.norm.gamma.map_or(0, |_| 2 * self.channels as u64 / 2)
    }
}
