use ghost_autograd::gradcheck::check;
use ghost_autograd::{ops, Array, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn rand_array(shape: &[usize], seed: u64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from kinks at 0 (and at +-3 for hard sigmoid).
fn smooth_array(shape: &[usize], seed: u64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape.to_vec(), |_| {
        let m: f64 = rng.gen_range(0.1..2.5);
        if rng.gen_bool(0.5) { m } else { -m }
    })
}

fn assert_grad(name: &str, f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>, inputs: &[Array<f64>]) {
    let report = check(f, inputs, 1e-5, 200, 7);
    assert!(report.max_error < TOL, "{name}: max error {:.3e} over {} probes", report.max_error, report.checked);
}

#[test]
fn elementwise_arithmetic() {
    let a = rand_array(&[2, 3, 4, 5], 1);
    let b = rand_array(&[2, 3, 4, 5], 2);
    assert_grad("add", |x| ops::add(&x[0], &x[1]), &[a.clone(), b.clone()]);
    assert_grad("sub", |x| ops::sub(&x[0], &x[1]), &[a.clone(), b.clone()]);
    assert_grad("mul", |x| ops::mul(&x[0], &x[1]), &[a.clone(), b.clone()]);
    assert_grad("sqr", |x| ops::sqr(&x[0]), &[a.clone()]);
    assert_grad("add_scalar", |x| ops::add_scalar(&x[0], 0.3), &[a.clone()]);
    assert_grad("mul_scalar", |x| ops::mul_scalar(&x[0], -1.7), &[a.clone()]);
    assert_grad("add_broadcast", |x| ops::add_broadcast(&x[0], &x[1]), &[a.clone(), rand_array(&[1], 3)]);
    assert_grad("mul_channels", |x| ops::mul_channels(&x[0], &x[1]), &[a.clone(), rand_array(&[2, 3, 1, 1], 4)]);
    assert_grad(
        "channel_affine_const",
        |x| ops::channel_affine_const(&x[0], &[2.0, -1.0, 0.5], &[0.1, 0.2, 0.3]),
        &[a],
    );
}

#[test]
fn activations() {
    let a = smooth_array(&[1, 2, 5, 5], 5);
    assert_grad("relu", |x| ops::relu(&x[0]), &[a.clone()]);
    assert_grad("leaky_relu", |x| ops::leaky_relu(&x[0], 0.2), &[a.clone()]);
    assert_grad("tanh", |x| ops::tanh(&x[0]), &[a.clone()]);
    let hs = a.map(|v| if (v.abs() - 3.0).abs() < 0.1 { v * 0.5 } else { v });
    assert_grad("hard_sigmoid", |x| ops::hard_sigmoid(&x[0]), &[hs]);
    let cl = a.map(|v| if (v.abs() - 1.0).abs() < 0.05 { v * 0.9 } else { v });
    assert_grad("clamp", |x| ops::clamp(&x[0], -1.0, 1.0), &[cl]);
}

#[test]
fn reductions() {
    let a = rand_array(&[2, 3, 4, 4], 6);
    let b = rand_array(&[2, 3, 4, 4], 7);
    assert_grad("sum_all", |x| ops::sum_all(&x[0]), &[a.clone()]);
    assert_grad("mean_all", |x| ops::mean_all(&x[0]), &[a.clone()]);
    assert_grad("mse", |x| ops::mse(&x[0], &x[1]), &[a.clone(), b]);
    assert_grad("global_avg_pool", |x| ops::global_avg_pool(&x[0]), &[a]);
}

#[test]
fn shape_ops() {
    let a = rand_array(&[2, 3, 5, 6], 8);
    let b = rand_array(&[2, 2, 5, 6], 9);
    assert_grad("concat", |x| ops::concat_channels(&[&x[0], &x[1]]), &[a.clone(), b]);
    assert_grad("narrow", |x| ops::narrow_channels(&x[0], 1, 2), &[a.clone()]);
    assert_grad("crop", |x| ops::crop(&x[0], 1, 2, 3, 3), &[a.clone()]);
    assert_grad("reflect_pad", |x| ops::reflect_pad(&x[0], 2, 3, 1, 7), &[a.clone()]);
    assert_grad("upsample", |x| ops::upsample_nearest(&x[0], 3), &[a]);
    // distinct values
    let distinct = Array::from_fn(vec![1, 2, 5, 4], |i| ((i * 37) % 40) as f64 * 0.1);
    assert_grad("max_pool2", |x| ops::max_pool2(&x[0]), &[distinct]);
}

#[test]
fn convolutions() {
    for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0), (4, 2, 2), (4, 1, 2), (5, 1, 2)] {
        let x = rand_array(&[2, 3, 7, 6], 10);
        let w = rand_array(&[4, 3, k, k], 11);
        let b = rand_array(&[4], 12);
        assert_grad(
            &format!("conv k{k} s{stride} p{pad}"),
            |t| ops::conv2d(&t[0], &t[1], Some(&t[2]), stride, pad),
            &[x.clone(), w, b],
        );
        let dw = rand_array(&[3, 1, k, k], 13);
        let db = rand_array(&[3], 14);
        assert_grad(
            &format!("depthwise k{k} s{stride} p{pad}"),
            |t| ops::depthwise_conv2d(&t[0], &t[1], Some(&t[2]), stride, pad),
            &[x, dw, db],
        );
    }
}

#[test]
fn normalizations() {
    let x = rand_array(&[2, 3, 4, 5], 15);
    let g = rand_array(&[3], 16);
    let b = rand_array(&[3], 17);
    assert_grad("instance_norm", |t| ops::instance_norm(&t[0], Some(&t[1]), Some(&t[2]), 1e-5), &[x.clone(), g.clone(), b.clone()]);
    assert_grad("instance_norm plain", |t| ops::instance_norm(&t[0], None, None, 1e-5), &[x.clone()]);
    assert_grad("batch_norm train", |t| ops::batch_norm_train(&t[0], Some(&t[1]), Some(&t[2]), 1e-5).0, &[x.clone(), g.clone(), b.clone()]);
    let rm = rand_array(&[3], 18);
    let rv = rand_array(&[3], 19).map(|v| v.abs() + 0.5);
    assert_grad("batch_norm eval", |t| ops::batch_norm_eval(&t[0], Some(&t[1]), Some(&t[2]), &rm, &rv, 1e-5), &[x, g, b]);
}

#[test]
fn composite_graph_with_reuse() {
    let x = rand_array(&[1, 2, 6, 6], 20);
    let w = rand_array(&[2, 2, 3, 3], 21);
    assert_grad(
        "composite",
        |t| {
            let y = ops::conv2d(&t[0], &t[1], None, 1, 1);
            let z = ops::tanh(&ops::instance_norm(&y, None, None, 1e-5));
            ops::add(&ops::mul(&z, &t[0]), &ops::upsample_nearest(&ops::max_pool2(&z), 2))
        },
        &[x, w],
    );
}

#[test]
fn clamp_propagates_nan() {
    let x = Tensor::constant(Array::from_vec(vec![3], vec![f64::NAN, -5.0, 5.0]));
    let y = ops::clamp(&x, 0.0, 1.0);
    let v = y.value().data();
    assert!(v[0].is_nan());
    assert_eq!(&v[1..], &[0.0, 1.0]);
}
