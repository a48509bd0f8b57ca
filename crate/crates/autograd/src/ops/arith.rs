use crate::{Array, Float, Tensor};

pub fn add<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let value = a.value().zip_map(b.value(), |x, y| x + y);
    Tensor::from_op(value, vec![a.clone(), b.clone()], |g, _| vec![Some(g.clone()), Some(g.clone())])
}

pub fn sub<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let value = a.value().zip_map(b.value(), |x, y| x - y);
    Tensor::from_op(value, vec![a.clone(), b.clone()], |g, needs| {
        vec![Some(g.clone()), needs[1].then(|| g.map(|v| -v))]
    })
}

pub fn mul<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let value = a.value().zip_map(b.value(), |x, y| x * y);
    let (av, bv) = (a.value().clone(), b.value().clone());
    Tensor::from_op(value, vec![a.clone(), b.clone()], move |g, needs| {
        vec![
            needs[0].then(|| g.zip_map(&bv, |g, y| g * y)),
            needs[1].then(|| g.zip_map(&av, |g, x| g * x)),
        ]
    })
}

pub fn sqr<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let xv = x.value().clone();
    let value = xv.map(|v| v * v);
    Tensor::from_op(value, vec![x.clone()], move |g, _| {
        let two = T::of_f64(2.0);
        vec![Some(g.zip_map(&xv, |g, x| two * g * x))]
    })
}

pub fn add_scalar<T: Float>(x: &Tensor<T>, c: f64) -> Tensor<T> {
    let c = T::of_f64(c);
    Tensor::from_op(x.value().map(|v| v + c), vec![x.clone()], |g, _| vec![Some(g.clone())])
}

pub fn mul_scalar<T: Float>(x: &Tensor<T>, c: f64) -> Tensor<T> {
    let c = T::of_f64(c);
    Tensor::from_op(x.value().map(|v| v * c), vec![x.clone()], move |g, _| vec![Some(g.scale(c))])
}

/// `x + s` where `s` holds a single element broadcast over `x`.
pub fn add_broadcast<T: Float>(x: &Tensor<T>, s: &Tensor<T>) -> Tensor<T> {
    assert_eq!(s.value().len(), 1, "add_broadcast expects a one-element tensor");
    let sv = s.value().data()[0];
    let shape = s.shape().to_vec();
    Tensor::from_op(x.value().map(|v| v + sv), vec![x.clone(), s.clone()], move |g, needs| {
        let ds = needs[1].then(|| Array::from_vec(shape.clone(), vec![T::of_f64(g.sum())]));
        vec![Some(g.clone()), ds]
    })
}

/// `x[n, c, :, :] * s[n, c]` for `x: (N, C, H, W)` and `s: (N, C, 1, 1)`.
pub fn mul_channels<T: Float>(x: &Tensor<T>, s: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert_eq!(s.shape(), &[n, c, 1, 1], "mul_channels scale shape");
    let hw = h * w;
    let (xv, sv) = (x.value().clone(), s.value().clone());
    let mut out = xv.data().to_vec();
    for (plane, &scale) in out.chunks_mut(hw).zip(sv.data()) {
        plane.iter_mut().for_each(|v| *v *= scale);
    }
    let value = Array::from_vec(x.shape().to_vec(), out);
    Tensor::from_op(value, vec![x.clone(), s.clone()], move |g, needs| {
        let dx = needs[0].then(|| {
            let mut d = g.data().to_vec();
            for (plane, &scale) in d.chunks_mut(hw).zip(sv.data()) {
                plane.iter_mut().for_each(|v| *v *= scale);
            }
            Array::from_vec(g.shape().to_vec(), d)
        });
        let ds = needs[1].then(|| {
            let d: Vec<T> = g
                .data()
                .chunks(hw)
                .zip(xv.data().chunks(hw))
                .map(|(gp, xp)| T::of_f64(gp.iter().zip(xp).map(|(&a, &b)| (a * b).as_f64()).sum()))
                .collect();
            Array::from_vec(vec![n, c, 1, 1], d)
        });
        vec![dx, ds]
    })
}

/// Per-channel `x * scale[c] + shift[c]` with constant coefficients.
pub fn channel_affine_const<T: Float>(x: &Tensor<T>, scale: &[f64], shift: &[f64]) -> Tensor<T> {
    let (_, c, h, w) = x.dims4();
    assert!(scale.len() == c && shift.len() == c, "channel_affine_const expects {c} coefficients");
    let hw = h * w;
    let scale: Vec<T> = scale.iter().map(|&v| T::of_f64(v)).collect();
    let shift: Vec<T> = shift.iter().map(|&v| T::of_f64(v)).collect();
    let mut out = x.value().data().to_vec();
    for (i, plane) in out.chunks_mut(hw).enumerate() {
        let (a, b) = (scale[i % c], shift[i % c]);
        plane.iter_mut().for_each(|v| *v = *v * a + b);
    }
    let value = Array::from_vec(x.shape().to_vec(), out);
    Tensor::from_op(value, vec![x.clone()], move |g, _| {
        let mut d = g.data().to_vec();
        for (i, plane) in d.chunks_mut(hw).enumerate() {
            let a = scale[i % c];
            plane.iter_mut().for_each(|v| *v *= a);
        }
        vec![Some(Array::from_vec(g.shape().to_vec(), d))]
    })
}
