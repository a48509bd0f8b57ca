use crate::{Float, Tensor};

fn unary<T: Float>(x: &Tensor<T>, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Tensor<T> {
    let xv = x.value().clone();
    let value = xv.map(f);
    let yv = value.clone();
    Tensor::from_op(value, vec![x.clone()], move |g, _| {
        let d: Vec<T> = g
            .data()
            .iter()
            .zip(xv.data())
            .zip(yv.data())
            .map(|((&g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(crate::Array::from_vec(g.shape().to_vec(), d))]
    })
}

pub fn relu<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
}

pub fn leaky_relu<T: Float>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::of_f64(slope);
    unary(x, move |v| if v > T::zero() { v } else { v * s }, move |x, _| if x > T::zero() { T::one() } else { s })
}

pub fn tanh<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
}

/// `relu6(x + 3) / 6`, the gate used by squeeze-excitation.
pub fn hard_sigmoid<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let three = T::of_f64(3.0);
    let six = T::of_f64(6.0);
    unary(
        x,
        move |v| (v + three).max(T::zero()).min(six) / six,
        move |x, _| if x > -three && x < three { T::one() / six } else { T::zero() },
    )
}

/// Clamp into `[lo, hi]`; the gradient passes where the input is inside the
/// closed interval.
pub fn clamp<T: Float>(x: &Tensor<T>, lo: f64, hi: f64) -> Tensor<T> {
    let (lo, hi) = (T::of_f64(lo), T::of_f64(hi));
    unary(
        x,
        // NaN passes through.
        move |v| if v.is_nan() { v } else { v.max(lo).min(hi) },
        move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
    )
}
