use std::path::{Path, PathBuf};

use ghost_autograd::{ops, Array, Ctx, Float, ParamBuilder, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::blocks::layers::Conv2d;
use crate::error::{contract, Error, Result};

/// Feature layer compared by the perceptual loss, in torchvision indexing.
pub const FEATURE_LAYER: &str = "vgg19.features.14 (conv3_3, before ReLU)";

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// `(torchvision index, cin, cout, max-pool before)` for VGG19 up to conv3_3.
const VGG_LAYERS: [(usize, usize, usize, bool); 7] = [
    (0, 3, 64, false),
    (2, 64, 64, false),
    (5, 64, 128, true),
    (7, 128, 128, false),
    (10, 128, 256, true),
    (12, 256, 256, false),
    (14, 256, 256, false),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerceptualSource {
    /// Pretrained VGG19 convolutions in a safetensors file with torchvision
    /// key names (`features.0.weight`, ...).
    Vgg19 { weights: PathBuf },
    /// VGG19-shaped stack with frozen random weights, channels divided by
    /// `width_divisor`. Never selected implicitly.
    FixedRandom { seed: u64, width_divisor: usize },
}

impl Default for PerceptualSource {
    fn default() -> Self {
        PerceptualSource::Vgg19 { weights: PathBuf::from("weights/vgg19_features.safetensors") }
    }
}

impl PerceptualSource {
    pub fn problems(&self) -> Vec<String> {
        match self {
            PerceptualSource::FixedRandom { width_divisor, .. } if *width_divisor == 0 || 64 % width_divisor != 0 => {
                vec![format!("perceptual.width_divisor must divide 64, got {width_divisor}")]
            }
            _ => Vec::new(),
        }
    }

    /// Identifier stored with checkpoints so losses stay comparable.
    pub fn descriptor(&self) -> String {
        match self {
            PerceptualSource::Vgg19 { .. } => format!("pretrained {FEATURE_LAYER}"),
            PerceptualSource::FixedRandom { seed, width_divisor } => {
                format!("fixed-random {FEATURE_LAYER}, width/{width_divisor}, seed {seed}")
            }
        }
    }
}

/// Frozen convolutional feature extractor.
pub struct PerceptualExtractor<T: Float> {
    convs: Vec<(Conv2d, bool)>,
    store: ParamStore<T>,
    descriptor: String,
}

impl<T: Float> PerceptualExtractor<T> {
    pub fn from_source(source: &PerceptualSource) -> Result<Self> {
        match source {
            PerceptualSource::Vgg19 { weights } => Self::load_vgg19(weights),
            PerceptualSource::FixedRandom { seed, width_divisor } => {
                let p = source.problems();
                if !p.is_empty() {
                    return Err(Error::ConfigList(p));
                }
                let mut ex = Self::skeleton(*width_divisor, *seed);
                ex.descriptor = source.descriptor();
                Ok(ex)
            }
        }
    }

    fn skeleton(divisor: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let scale = |c: usize| if c == 3 { 3 } else { c / divisor };
        let convs = VGG_LAYERS
            .iter()
            .map(|&(idx, cin, cout, pool)| {
                (Conv2d::new(&mut pb.pp(format!("features.{idx}")), scale(cin), scale(cout), 3, 1, true), pool)
            })
            .collect();
        Self { convs, store, descriptor: String::new() }
    }

    fn load_vgg19(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            Error::Dependency(format!(
                "perceptual loss needs pretrained VGG19 weights at {} ({e}). Export torchvision's vgg19().features \
                 state dict to safetensors with keys `features.<i>.weight` / `features.<i>.bias`, or set \
                 perceptual.kind = \"fixed_random\" to use a frozen random extractor instead",
                path.display()
            ))
        })?;
        let st = SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::Dependency(format!("VGG19 weights {} unreadable: {e}", path.display())))?;
        let mut ex = Self::skeleton(1, 0);
        let ids: Vec<_> = ex.store.iter().map(|(id, e)| (id, e.name.clone())).collect();
        for (id, name) in ids {
            let view = st
                .tensor(&name)
                .map_err(|_| Error::Dependency(format!("VGG19 weights {} lack tensor `{name}`", path.display())))?;
            let expected = ex.store.get(id).shape().to_vec();
            if view.shape() != expected.as_slice() || view.dtype() != Dtype::F32 {
                return Err(Error::Dependency(format!(
                    "VGG19 tensor `{name}` is {:?} {:?}, expected F32 {expected:?}",
                    view.dtype(),
                    view.shape()
                )));
            }
            let data =
                view.data().chunks_exact(4).map(|b| T::of_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64)).collect();
            ex.store.set(id, Array::from_vec(expected, data));
        }
        ex.descriptor = format!("pretrained {FEATURE_LAYER}");
        Ok(ex)
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    /// Features of an `(N, 3, H, W)` batch in `[0, 1]`.
    pub fn features(&self, x: &Tensor<T>) -> Tensor<T> {
        let ctx = Ctx::new(&self.store, false, false);
        let scale: Vec<f64> = IMAGENET_STD.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = IMAGENET_MEAN.iter().zip(&IMAGENET_STD).map(|(m, s)| -m / s).collect();
        let mut y = ops::channel_affine_const(x, &scale, &shift);
        let last = self.convs.len() - 1;
        for (i, (conv, pool)) in self.convs.iter().enumerate() {
            if *pool {
                y = ops::max_pool2(&y);
            }
            y = conv.forward(&ctx, &y);
            if i != last {
                y = ops::relu(&y);
            }
        }
        y
    }

    /// Mean squared feature distance; gradients flow into `pred` only.
    pub fn loss(&self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
        if pred.shape() != target.shape() {
            return Err(contract(format!("perceptual loss shapes differ: {:?} vs {:?}", pred.shape(), target.shape())));
        }
        let (_, _, h, w) = pred.dims4();
        if h < 4 || w < 4 {
            return Err(contract(format!("perceptual loss needs at least 4x4 images, got {h}x{w}")));
        }
        let ft = self.features(&target.detach()).detach();
        Ok(ops::mse(&self.features(pred), &ft))
    }
}
