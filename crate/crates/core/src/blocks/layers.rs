//! Parameterized primitive layers shared by the generator and the
//! discriminators.

use ghost_autograd::{ops, Array, Ctx, Float, Init, ParamBuilder, ParamId, Tensor};

use super::cost::{CostTrace, Dims, LayerKind};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// "Same" padding (`k / 2`).
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, cin: usize, cout: usize, kernel: usize, stride: usize, bias: bool) -> Self {
        Self::with_padding(pb, cin, cout, kernel, stride, kernel / 2, bias)
    }

    pub fn with_padding<T: Float>(
        pb: &mut ParamBuilder<T>,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let weight = pb.param("weight", &[cout, cin, kernel, kernel], Init::KaimingNormal { fan_in });
        let bias = bias.then(|| pb.param("bias", &[cout], Init::Zeros));
        Self { name: pb.prefix().to_string(), weight, bias, cin, cout, kernel, stride, pad }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &Tensor<T>) -> Tensor<T> {
        let b = self.bias.map(|id| ctx.param(id));
        ops::conv2d(x, &ctx.param(self.weight), b.as_ref(), self.stride, self.pad)
    }

    pub fn output_dims(&self, input: Dims) -> Dims {
        let f = |n: usize| (n + 2 * self.pad - self.kernel) / self.stride + 1;
        Dims::new(self.cout, f(input.h), f(input.w))
    }

    pub fn num_params(&self) -> u64 {
        (self.cout * self.cin * self.kernel * self.kernel + self.bias.map_or(0, |_| self.cout)) as u64
    }

    pub fn trace(&self, input: Dims, t: &mut CostTrace) -> Dims {
        assert_eq!(input.c, self.cin, "{}: traced input has {} channels, layer expects {}", self.name, input.c, self.cin);
        let out = self.output_dims(input);
        let macs = (out.c * out.h * out.w * self.cin * self.kernel * self.kernel) as u64;
        t.push(&self.name, LayerKind::Conv { kernel: self.kernel, stride: self.stride }, input, out, macs, self.num_params());
        out
    }
}

#[derive(Clone, Debug)]
pub struct DepthwiseConv2d {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl DepthwiseConv2d {
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, channels: usize, kernel: usize, stride: usize, bias: bool) -> Self {
        let weight = pb.param("weight", &[channels, 1, kernel, kernel], Init::KaimingNormal { fan_in: kernel * kernel });
        let bias = bias.then(|| pb.param("bias", &[channels], Init::Zeros));
        Self { name: pb.prefix().to_string(), weight, bias, channels, kernel, stride, pad: kernel / 2 }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &Tensor<T>) -> Tensor<T> {
        let b = self.bias.map(|id| ctx.param(id));
        ops::depthwise_conv2d(x, &ctx.param(self.weight), b.as_ref(), self.stride, self.pad)
    }

    pub fn num_params(&self) -> u64 {
        (self.channels * self.kernel * self.kernel + self.bias.map_or(0, |_| self.channels)) as u64
    }

    pub fn trace(&self, input: Dims, t: &mut CostTrace) -> Dims {
        assert_eq!(input.c, self.channels, "{}: channel mismatch in trace", self.name);
        let f = |n: usize| (n + 2 * self.pad - self.kernel) / self.stride + 1;
        let out = Dims::new(self.channels, f(input.h), f(input.w));
        let macs = (out.c * out.h * out.w * self.kernel * self.kernel) as u64;
        t.push(&self.name, LayerKind::Depthwise { kernel: self.kernel, stride: self.stride }, input, out, macs, self.num_params());
        out
    }
}

/// Instance normalization with optional per-channel affine.
#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub gamma: Option<ParamId>,
    pub beta: Option<ParamId>,
    pub channels: usize,
}

impl InstanceNorm {
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, channels: usize, affine: bool) -> Self {
        let (gamma, beta) = if affine {
            (Some(pb.param("weight", &[channels], Init::Ones)), Some(pb.param("bias", &[channels], Init::Zeros)))
        } else {
            (None, None)
        };
        Self { gamma, beta, channels }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &Tensor<T>) -> Tensor<T> {
        let g = self.gamma.map(|id| ctx.param(id));
        let b = self.beta.map(|id| ctx.param(id));
        ops::instance_norm(x, g.as_ref(), b.as_ref(), NORM_EPS)
    }
}

/// Batch normalization with running statistics kept as buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new<T: Float>(pb: &mut ParamBuilder<T>, channels: usize) -> Self {
        Self {
            gamma: pb.param("weight", &[channels], Init::Ones),
            beta: pb.param("bias", &[channels], Init::Zeros),
            running_mean: pb.buffer("running_mean", &[channels], Init::Zeros),
            running_var: pb.buffer("running_var", &[channels], Init::Ones),
            channels,
        }
    }

    /// Batch statistics in train mode (queuing running-average updates on the
    /// context), running statistics otherwise.
    pub fn forward<T: Float>(&self, ctx: &Ctx<T>, x: &Tensor<T>) -> Tensor<T> {
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        let store = ctx.store();
        if !ctx.is_train() {
            return ops::batch_norm_eval(x, Some(&g), Some(&b), store.get(self.running_mean), store.get(self.running_var), NORM_EPS);
        }
        let (y, stats) = ops::batch_norm_train(x, Some(&g), Some(&b), NORM_EPS);
        let blend = |old: &Array<T>, new: &[f64]| {
            Array::from_vec(
                vec![self.channels],
                old.data().iter().zip(new).map(|(o, n)| T::of_f64((1.0 - BN_MOMENTUM) * o.as_f64() + BN_MOMENTUM * n)).collect(),
            )
        };
        ctx.record_buffer(self.running_mean, blend(store.get(self.running_mean), &stats.mean));
        ctx.record_buffer(self.running_var, blend(store.get(self.running_var), &stats.var_unbiased));
        y
    }
}
