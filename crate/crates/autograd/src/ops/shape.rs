use crate::{Array, Float, Tensor};

/// Concatenate `(N, C_i, H, W)` tensors along channels.
pub fn concat_channels<T: Float>(parts: &[&Tensor<T>]) -> Tensor<T> {
    assert!(!parts.is_empty(), "concat of nothing");
    let (n, _, h, w) = parts[0].dims4();
    let hw = h * w;
    let chans: Vec<usize> = parts
        .iter()
        .map(|p| {
            let (pn, pc, ph, pw) = p.dims4();
            assert!((pn, ph, pw) == (n, h, w), "concat spatial mismatch: {:?} vs {:?}", p.shape(), parts[0].shape());
            pc
        })
        .collect();
    let ctot: usize = chans.iter().sum();
    let mut out = Vec::with_capacity(n * ctot * hw);
    for b in 0..n {
        for (p, &pc) in parts.iter().zip(&chans) {
            out.extend_from_slice(&p.value().data()[b * pc * hw..][..pc * hw]);
        }
    }
    let value = Array::from_vec(vec![n, ctot, h, w], out);
    let parents = parts.iter().map(|&p| p.clone()).collect();
    Tensor::from_op(value, parents, move |g, needs| {
        let mut offset = 0;
        chans
            .iter()
            .zip(needs)
            .map(|(&pc, &need)| {
                let start = offset;
                offset += pc;
                need.then(|| {
                    let mut d = Vec::with_capacity(n * pc * hw);
                    for b in 0..n {
                        d.extend_from_slice(&g.data()[(b * ctot + start) * hw..][..pc * hw]);
                    }
                    Array::from_vec(vec![n, pc, h, w], d)
                })
            })
            .collect()
    })
}

/// Channels `[start, start + len)`.
pub fn narrow_channels<T: Float>(x: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert!(start + len <= c, "narrow [{start}, {}) out of {c} channels", start + len);
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    for b in 0..n {
        out.extend_from_slice(&x.value().data()[(b * c + start) * hw..][..len * hw]);
    }
    let value = Array::from_vec(vec![n, len, h, w], out);
    Tensor::from_op(value, vec![x.clone()], move |g, _| {
        let mut d = vec![T::zero(); n * c * hw];
        for b in 0..n {
            d[(b * c + start) * hw..][..len * hw].copy_from_slice(&g.data()[b * len * hw..][..len * hw]);
        }
        vec![Some(Array::from_vec(vec![n, c, h, w], d))]
    })
}

/// Spatial window `[y0, y0 + h) x [x0, x0 + w)`.
pub fn crop<T: Float>(x: &Tensor<T>, y0: usize, x0: usize, h: usize, w: usize) -> Tensor<T> {
    let (n, c, ih, iw) = x.dims4();
    assert!(y0 + h <= ih && x0 + w <= iw, "crop window exceeds {ih}x{iw}");
    let mut out = Vec::with_capacity(n * c * h * w);
    for p in x.value().data().chunks(ih * iw) {
        for y in y0..y0 + h {
            out.extend_from_slice(&p[y * iw + x0..][..w]);
        }
    }
    let value = Array::from_vec(vec![n, c, h, w], out);
    Tensor::from_op(value, vec![x.clone()], move |g, _| {
        let mut d = vec![T::zero(); n * c * ih * iw];
        for (dp, gp) in d.chunks_mut(ih * iw).zip(g.data().chunks(h * w)) {
            for y in 0..h {
                dp[(y0 + y) * iw + x0..][..w].copy_from_slice(&gp[y * w..][..w]);
            }
        }
        vec![Some(Array::from_vec(vec![n, c, ih, iw], d))]
    })
}

/// Mirror an out-of-range index back into `[0, len)` without repeating the
/// edge sample. Repeats periodically, so any offset is valid even when it
/// exceeds the length.
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflection padding on the spatial dimensions.
pub fn reflect_pad<T: Float>(x: &Tensor<T>, top: usize, bottom: usize, left: usize, right: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h + top + bottom, w + left + right);
    let rows: Vec<usize> = (0..oh).map(|y| reflect_index(y as isize - top as isize, h)).collect();
    let cols: Vec<usize> = (0..ow).map(|x| reflect_index(x as isize - left as isize, w)).collect();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in x.value().data().chunks(h * w) {
        for &sy in &rows {
            let src = &p[sy * w..][..w];
            out.extend(cols.iter().map(|&sx| src[sx]));
        }
    }
    let value = Array::from_vec(vec![n, c, oh, ow], out);
    Tensor::from_op(value, vec![x.clone()], move |g, _| {
        let mut d = vec![T::zero(); n * c * h * w];
        for (dp, gp) in d.chunks_mut(h * w).zip(g.data().chunks(oh * ow)) {
            for (y, &sy) in rows.iter().enumerate() {
                for (x, &sx) in cols.iter().enumerate() {
                    dp[sy * w + sx] += gp[y * ow + x];
                }
            }
        }
        vec![Some(Array::from_vec(vec![n, c, h, w], d))]
    })
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Float>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    assert!(factor >= 1);
    if factor == 1 {
        return x.clone();
    }
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in x.value().data().chunks(h * w) {
        for y in 0..oh {
            let src = &p[(y / factor) * w..][..w];
            for &v in src {
                out.extend(std::iter::repeat_n(v, factor));
            }
        }
    }
    let value = Array::from_vec(vec![n, c, oh, ow], out);
    Tensor::from_op(value, vec![x.clone()], move |g, _| {
        let mut d = vec![T::zero(); n * c * h * w];
        for (dp, gp) in d.chunks_mut(h * w).zip(g.data().chunks(oh * ow)) {
            for y in 0..oh {
                let dr = &mut dp[(y / factor) * w..][..w];
                for (x, &gv) in gp[y * ow..][..ow].iter().enumerate() {
                    dr[x / factor] += gv;
                }
            }
        }
        vec![Some(Array::from_vec(vec![n, c, h, w], d))]
    })
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
/// Ties route the gradient to the first maximum in row-major order.
pub fn max_pool2<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for p in x.value().data().chunks(h * w) {
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = (2 * y) * w + 2 * xo;
                for idx in [(2 * y) * w + 2 * xo + 1, (2 * y + 1) * w + 2 * xo, (2 * y + 1) * w + 2 * xo + 1] {
                    if p[idx] > p[best] {
                        best = idx;
                    }
                }
                out.push(p[best]);
                arg.push(best as u32);
            }
        }
    }
    let value = Array::from_vec(vec![n, c, oh, ow], out);
    Tensor::from_op(value, vec![x.clone()], move |g, _| {
        let mut d = vec![T::zero(); n * c * h * w];
        for ((dp, gp), ap) in d.chunks_mut(h * w).zip(g.data().chunks(oh * ow)).zip(arg.chunks(oh * ow)) {
            for (&gv, &a) in gp.iter().zip(ap) {
                dp[a as usize] += gv;
            }
        }
        vec![Some(Array::from_vec(vec![n, c, h, w], d))]
    })
}
