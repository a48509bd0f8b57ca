//! Network building blocks: cheap modules, half instance normalization and
//! the truncated Ghost bottleneck backbone.

mod backbone;
mod cheap;
pub mod cost;
mod hin;
pub mod layers;

pub use backbone::{make_divisible, Backbone, BackboneConfig, GhostBottleneck, GhostModule, StageSpec, GHOST_STAGES};
pub use cheap::{CheapModule, CheapModuleConfig};
pub use cost::{CostTrace, Dims, LayerCost, LayerKind, Section};
pub use hin::HalfInstanceNorm;

use ghost_autograd::{Float, Tensor};

use crate::error::{contract, Result};

pub const VALID_STRIDES: [usize; 6] = [1, 2, 4, 8, 16, 32];

/// A batch of `C x H x W` activations together with their downsampling
/// factor relative to the network input.
#[derive(Clone, Debug)]
pub struct FeatureMap<T: Float> {
    tensor: Tensor<T>,
    stride: usize,
}

impl<T: Float> FeatureMap<T> {
    pub fn new(tensor: Tensor<T>, stride: usize) -> Result<Self> {
        if tensor.shape().len() != 4 {
            return Err(contract(format!("feature map must be (N, C, H, W), got {:?}", tensor.shape())));
        }
        if !VALID_STRIDES.contains(&stride) {
            return Err(contract(format!("feature stride {stride} not in {VALID_STRIDES:?}")));
        }
        Ok(Self { tensor, stride })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[3]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn is_finite(&self) -> bool {
        self.tensor.value().all_finite()
    }

    pub(crate) fn with_tensor(&self, tensor: Tensor<T>) -> Self {
        Self { tensor, stride: self.stride }
    }
}
