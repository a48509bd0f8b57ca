mod common;

use common::{fm, input_grad_error, param_grad_error, rand_array, GRAD_TOL};
use ghost_autograd::{Array, Ctx, ParamBuilder, ParamStore, Tensor};
use ghost_deblur::blocks::{CheapModule, CheapModuleConfig, GhostBottleneck, GhostModule, HalfInstanceNorm, StageSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn hin_passes_second_half_through_exactly() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let hin = HalfInstanceNorm::new(&mut ParamBuilder::new(&mut store, &mut rng), 6, true).unwrap();
    let x = Tensor::constant(rand_array(&[2, 6, 8, 8], 1).map(|v| 3.0 * v + 0.7));
    let y = hin.forward(&Ctx::inference(&store), &fm(&x)).unwrap();
    let (xv, yv) = (x.value(), y.tensor().value());
    for n in 0..2 {
        for c in 0..6 {
            let off = (n * 6 + c) * 64;
            let (xs, ys) = (&xv.data()[off..off + 64], &yv.data()[off..off + 64]);
            if c >= 3 {
                assert_eq!(xs, ys, "channel {c} changed");
            } else {
                let mean = ys.iter().sum::<f64>() / 64.0;
                let var = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
                assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-3, "channel {c}: mean {mean} var {var}");
            }
        }
    }
}

#[test]
fn hin_rejects_odd_channels() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(HalfInstanceNorm::new(&mut ParamBuilder::new(&mut store, &mut rng), 5, true).is_err());
}

#[test]
fn cheap_module_is_intrinsic_then_depthwise_half() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = CheapModule::new(&mut ParamBuilder::new(&mut store, &mut rng), CheapModuleConfig::new(5, 8)).unwrap();
    let ctx = Ctx::inference(&store);
    let x = Tensor::constant(rand_array(&[1, 5, 8, 8], 3));
    let y = m.forward(&ctx, &fm(&x)).unwrap();
    assert_eq!(y.tensor().shape(), &[1, 8, 8, 8]);
    let intrinsic = m.intrinsic.forward(&ctx, &x);
    let cheap = m.cheap.forward(&ctx, &intrinsic);
    let yv = y.tensor().value().data();
    assert_eq!(&yv[..4 * 64], intrinsic.value().data());
    assert_eq!(&yv[4 * 64..], cheap.value().data());
}

#[test]
fn cheap_module_with_identity_kernels_duplicates_its_input() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = CheapModule::new(&mut ParamBuilder::new(&mut store, &mut rng), CheapModuleConfig::new(4, 8)).unwrap();
    store.set(m.intrinsic.weight, Array::from_fn(vec![4, 4, 1, 1], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 }));
    store.set(m.cheap.weight, Array::from_fn(vec![4, 1, 3, 3], |i| if i % 9 == 4 { 1.0 } else { 0.0 }));
    for b in [m.intrinsic.bias, m.cheap.bias].into_iter().flatten() {
        store.set(b, Array::zeros(vec![4]));
    }
    let x = Tensor::constant(rand_array(&[1, 4, 8, 8], 5));
    let y = m.forward(&Ctx::inference(&store), &fm(&x)).unwrap();
    let yv = y.tensor().value().data();
    assert_eq!(&yv[..256], x.value().data());
    assert_eq!(&yv[256..], x.value().data());
}

#[test]
fn cheap_module_rejects_wrong_input_width_and_tiny_maps() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = CheapModule::new(&mut ParamBuilder::new(&mut store, &mut rng), CheapModuleConfig::new(4, 8)).unwrap();
    let ctx = Ctx::inference(&store);
    assert!(m.forward(&ctx, &fm(&Tensor::constant(rand_array(&[1, 3, 8, 8], 0)))).is_err());
    assert!(m.forward(&ctx, &fm(&Tensor::constant(rand_array(&[1, 4, 2, 8], 0)))).is_err());
    assert!(CheapModuleConfig::new(4, 7).validate().is_err());
}

#[test]
fn cheap_module_gradients_match_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = CheapModule::new(&mut ParamBuilder::new(&mut store, &mut rng), CheapModuleConfig::new(3, 6)).unwrap();
    let x = rand_array(&[2, 3, 8, 8], 8);
    let f = |ctx: &Ctx<f64>, x: &Tensor<f64>| m.forward(ctx, &fm(x)).unwrap().tensor().clone();
    let ei = input_grad_error(&store, &x, f);
    let ep = param_grad_error(&mut store, &x, f);
    assert!(ei < GRAD_TOL && ep < GRAD_TOL, "input {ei:.2e} params {ep:.2e}");
}

#[test]
fn hin_gradients_match_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let hin = HalfInstanceNorm::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, true).unwrap();
    for id in store.trainable_ids() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, rand_array(&shape, 10));
    }
    let x = rand_array(&[2, 4, 8, 8], 12);
    let f = |ctx: &Ctx<f64>, x: &Tensor<f64>| hin.forward(ctx, &fm(x)).unwrap().tensor().clone();
    let ei = input_grad_error(&store, &x, f);
    let ep = param_grad_error(&mut store, &x, f);
    assert!(ei < GRAD_TOL && ep < GRAD_TOL, "input {ei:.2e} params {ep:.2e}");
}

#[test]
fn ghost_module_gradients_match_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = GhostModule::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, 6, true);
    let x = rand_array(&[2, 4, 8, 8], 14);
    let f = |ctx: &Ctx<f64>, x: &Tensor<f64>| g.forward(ctx, x);
    let ei = input_grad_error(&store, &x, f);
    let ep = param_grad_error(&mut store, &x, f);
    assert!(ei < GRAD_TOL && ep < GRAD_TOL, "input {ei:.2e} params {ep:.2e}");
}

#[test]
fn ghost_bottleneck_gradients_match_finite_differences() {
    for (seed, spec) in [
        (15, StageSpec { kernel: 3, hidden: 8, out: 4, se_ratio: 0.0, stride: 1 }),
        (16, StageSpec { kernel: 5, hidden: 12, out: 8, se_ratio: 0.25, stride: 2 }),
    ] {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = GhostBottleneck::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, &spec, 1.0);
        let x = rand_array(&[2, 4, 8, 8], seed + 100);
        let f = |ctx: &Ctx<f64>, x: &Tensor<f64>| b.forward(ctx, x);
        let ei = input_grad_error(&store, &x, f);
        let ep = param_grad_error(&mut store, &x, f);
        assert!(ei < GRAD_TOL && ep < GRAD_TOL, "stride {}: input {ei:.2e} params {ep:.2e}", spec.stride);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hin_passthrough_holds_for_any_even_width(half in 1usize..5, seed in 0u64..1000) {
        let c = 2 * half;
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hin = HalfInstanceNorm::new(&mut ParamBuilder::new(&mut store, &mut rng), c, false).unwrap();
        let x = Tensor::constant(rand_array(&[1, c, 5, 6], seed));
        let y = hin.forward(&Ctx::inference(&store), &fm(&x)).unwrap();
        let n = half * 30;
        prop_assert_eq!(&x.value().data()[n..], &y.tensor().value().data()[n..]);
    }

    #[test]
    fn cheap_module_output_width_is_configured(cin in 1usize..6, half in 1usize..5, seed in 0u64..100) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = CheapModule::new(&mut ParamBuilder::new(&mut store, &mut rng), CheapModuleConfig::new(cin, 2 * half)).unwrap();
        let y = m.forward(&Ctx::inference(&store), &fm(&Tensor::constant(rand_array(&[1, cin, 4, 5], seed)))).unwrap();
        prop_assert_eq!(y.tensor().shape(), &[1, 2 * half, 4, 5]);
    }
}
