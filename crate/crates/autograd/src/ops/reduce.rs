use crate::{Array, Float, Tensor};

pub fn sum_all<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let shape = x.shape().to_vec();
    let value = Array::scalar(T::of_f64(x.value().sum()));
    Tensor::from_op(value, vec![x.clone()], move |g, _| vec![Some(Array::full(shape.clone(), g.data()[0]))])
}

pub fn mean_all<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let shape = x.shape().to_vec();
    let n = x.value().len().max(1) as f64;
    let value = Array::scalar(T::of_f64(x.value().sum() / n));
    Tensor::from_op(value, vec![x.clone()], move |g, _| {
        vec![Some(Array::full(shape.clone(), T::of_f64(g.data()[0].as_f64() / n)))]
    })
}

/// Mean squared difference, accumulated in `f64`.
pub fn mse<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape(), "mse shape mismatch");
    let diff = a.value().zip_map(b.value(), |x, y| x - y);
    let n = diff.len().max(1) as f64;
    let value = Array::scalar(T::of_f64(diff.data().iter().map(|d| d.as_f64().powi(2)).sum::<f64>() / n));
    Tensor::from_op(value, vec![a.clone(), b.clone()], move |g, needs| {
        let k = T::of_f64(2.0 * g.data()[0].as_f64() / n);
        let da = diff.scale(k);
        let db = needs[1].then(|| da.map(|v| -v));
        vec![needs[0].then_some(da), db]
    })
}

/// `(N, C, H, W) -> (N, C, 1, 1)` spatial mean.
pub fn global_avg_pool<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let means: Vec<T> = x
        .value()
        .data()
        .chunks(hw)
        .map(|p| T::of_f64(p.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64))
        .collect();
    let value = Array::from_vec(vec![n, c, 1, 1], means);
    let shape = x.shape().to_vec();
    Tensor::from_op(value, vec![x.clone()], move |g, _| {
        let inv = T::of_f64(1.0 / hw as f64);
        let d: Vec<T> = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, hw)).collect();
        vec![Some(Array::from_vec(shape.clone(), d))]
    })
}
