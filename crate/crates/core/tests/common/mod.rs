#![allow(dead_code)]

use ghost_autograd::gradcheck::check;
use ghost_autograd::{ops, Array, Ctx, ParamStore, Tensor};
use ghost_deblur::blocks::FeatureMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-3;

pub fn rand_array(shape: &[usize], seed: u64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

pub fn fm(t: &Tensor<f64>) -> FeatureMap<f64> {
    FeatureMap::new(t.clone(), 1).unwrap()
}

/// Largest relative error between analytic parameter gradients and central
/// differences of `sum(f * r)`, probing a few entries of every parameter.
pub fn param_grad_error(store: &mut ParamStore<f64>, x: &Array<f64>, f: impl Fn(&Ctx<f64>, &Tensor<f64>) -> Tensor<f64>) -> f64 {
    let xt = Tensor::constant(x.clone());
    let y = f(&Ctx::new(store, true, false), &xt);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = Tensor::constant(Array::from_fn(y.shape().to_vec(), |_| rng.gen_range(-1.0..1.0)));
    let objective = |s: &ParamStore<f64>, track: bool| ops::sum_all(&ops::mul(&f(&Ctx::new(s, true, track), &xt), &r));
    let grads = objective(store, true).backward();
    let ids = store.trainable_ids();
    let mut worst = 0.0f64;
    for id in ids {
        let n = store.get(id).len();
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Array::zeros(store.get(id).shape().to_vec()));
        for _ in 0..4.min(n) {
            let i = rng.gen_range(0..n);
            let h = 1e-5;
            store.value_mut(id).data_mut()[i] += h;
            let up = objective(store, false).item();
            store.value_mut(id).data_mut()[i] -= 2.0 * h;
            let down = objective(store, false).item();
            store.value_mut(id).data_mut()[i] += h;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
        }
    }
    worst
}

pub fn input_grad_error(store: &ParamStore<f64>, x: &Array<f64>, f: impl Fn(&Ctx<f64>, &Tensor<f64>) -> Tensor<f64>) -> f64 {
    check(|xs| f(&Ctx::new(store, true, false), &xs[0]), std::slice::from_ref(x), 1e-5, 64, 3).max_error
}
