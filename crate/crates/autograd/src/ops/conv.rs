use super::valid_range;
use crate::counter::add_macs;
use crate::scalar::{gemm, MatRef};
use crate::{Array, Float, Tensor};

/// Upper bound on im2col buffer elements; larger outputs are processed in
/// bands of output rows.
const COL_BUDGET: usize = 1 << 22;

pub fn conv_output_size(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(len + 2 * pad >= kernel, "kernel {kernel} larger than padded input {len}+2*{pad}");
    (len + 2 * pad - kernel) / stride + 1
}

#[derive(Clone, Copy)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows_per_band(&self) -> usize {
        let per_row = self.cin * self.k * self.k * self.wo;
        (COL_BUDGET / per_row.max(1)).clamp(1, self.ho)
    }
}

/// Fill `col` (`cin*k*k` rows by `(r1-r0)*wo` columns) from one image.
fn im2col<T: Float>(x: &[T], g: &Geom, r0: usize, r1: usize, col: &mut [T]) {
    let l = (r1 - r0) * g.wo;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut col[((ci * g.k + ky) * g.k + kx) * l..][..l];
                let (xl, xh) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                for oy in r0..r1 {
                    let dst = &mut row[(oy - r0) * g.wo..][..g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h || xl >= xh {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..][..g.w];
                    dst[..xl].fill(T::zero());
                    dst[xh..].fill(T::zero());
                    let ix0 = xl * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        dst[xl..xh].copy_from_slice(&src[ix0..ix0 + (xh - xl)]);
                    } else {
                        for (j, d) in dst[xl..xh].iter_mut().enumerate() {
                            *d = src[ix0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add `col` back into the image gradient `dx`.
fn col2im<T: Float>(col: &[T], g: &Geom, r0: usize, r1: usize, dx: &mut [T]) {
    let l = (r1 - r0) * g.wo;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &col[((ci * g.k + ky) * g.k + kx) * l..][..l];
                let (xl, xh) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                if xl >= xh {
                    continue;
                }
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let src = &row[(oy - r0) * g.wo..][..g.wo];
                    let dst = &mut plane[iy as usize * g.w..][..g.w];
                    let ix0 = xl * g.stride + kx - g.pad;
                    for j in 0..xh - xl {
                        dst[ix0 + j * g.stride] += src[xl + j];
                    }
                }
            }
        }
    }
}

/// Dense 2-D convolution (cross-correlation) with square kernels and
/// symmetric zero padding. `x: (N, Cin, H, W)`, `w: (Cout, Cin, k, k)`,
/// `bias: (Cout)`.
pub fn conv2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, pad: usize) -> Tensor<T> {
    let (n, cin, h, wd) = x.dims4();
    let (cout, wcin, k, k2) = w.dims4();
    assert_eq!(k, k2, "conv2d expects square kernels");
    assert_eq!(cin, wcin, "conv2d channel mismatch: input {cin}, weight {wcin}");
    assert!(stride >= 1);
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[cout], "conv2d bias shape");
    }
    let g = Geom {
        cin,
        h,
        w: wd,
        k,
        stride,
        pad,
        ho: conv_output_size(h, k, stride, pad),
        wo: conv_output_size(wd, k, stride, pad),
    };
    let kk = cin * k * k;
    let (hw_in, hw_out) = (h * wd, g.ho * g.wo);
    add_macs((n * cout * hw_out * kk) as u64);

    let xv = x.value().clone();
    let wv = w.value().clone();
    let mut out = vec![T::zero(); n * cout * hw_out];
    let band = g.rows_per_band();
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * band * g.wo] };
    for b in 0..n {
        let xb = &xv.data()[b * cin * hw_in..][..cin * hw_in];
        let ob = &mut out[b * cout * hw_out..][..cout * hw_out];
        if g.is_pointwise() {
            gemm(T::one(), MatRef::row_major(wv.data(), cout, kk), MatRef::row_major(xb, cin, hw_in), T::zero(), ob, hw_out);
            continue;
        }
        let mut r0 = 0;
        while r0 < g.ho {
            let r1 = (r0 + band).min(g.ho);
            let l = (r1 - r0) * g.wo;
            im2col(xb, &g, r0, r1, &mut col[..kk * l]);
            gemm(
                T::one(),
                MatRef::row_major(wv.data(), cout, kk),
                MatRef::row_major(&col[..kk * l], kk, l),
                T::zero(),
                &mut ob[r0 * g.wo..],
                hw_out,
            );
            r0 = r1;
        }
    }
    if let Some(bv) = bias {
        for (i, plane) in out.chunks_mut(hw_out).enumerate() {
            let bias = bv.value().data()[i % cout];
            plane.iter_mut().for_each(|v| *v += bias);
        }
    }
    let value = Array::from_vec(vec![n, cout, g.ho, g.wo], out);

    let mut parents = vec![x.clone(), w.clone()];
    parents.extend(bias.cloned());
    Tensor::from_op(value, parents, move |gy, needs| {
        let gy = gy.data();
        let mut dx = needs[0].then(|| vec![T::zero(); n * cin * hw_in]);
        let mut dw = needs[1].then(|| vec![T::zero(); cout * kk]);
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * band * g.wo] };
        for b in 0..n {
            let xb = &xv.data()[b * cin * hw_in..][..cin * hw_in];
            let gb = &gy[b * cout * hw_out..][..cout * hw_out];
            if g.is_pointwise() {
                if let Some(dw) = dw.as_mut() {
                    gemm(T::one(), MatRef::row_major(gb, cout, hw_out), MatRef::transposed(xb, cin, hw_in), T::one(), dw, kk);
                }
                if let Some(dx) = dx.as_mut() {
                    let dxb = &mut dx[b * cin * hw_in..][..cin * hw_in];
                    gemm(T::one(), MatRef::transposed(wv.data(), cout, kk), MatRef::row_major(gb, cout, hw_out), T::zero(), dxb, hw_in);
                }
                continue;
            }
            let mut r0 = 0;
            while r0 < g.ho {
                let r1 = (r0 + band).min(g.ho);
                let l = (r1 - r0) * g.wo;
                let gband = MatRef::with_row_stride(&gb[r0 * g.wo..], cout, l, hw_out);
                if let Some(dw) = dw.as_mut() {
                    im2col(xb, &g, r0, r1, &mut col[..kk * l]);
                    gemm(T::one(), gband, MatRef::transposed(&col[..kk * l], kk, l), T::one(), dw, kk);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(T::one(), MatRef::transposed(wv.data(), cout, kk), gband, T::zero(), &mut col[..kk * l], l);
                    col2im(&col[..kk * l], &g, r0, r1, &mut dx[b * cin * hw_in..][..cin * hw_in]);
                }
                r0 = r1;
            }
        }
        let mut grads = vec![
            dx.map(|d| Array::from_vec(vec![n, cin, h, wd], d)),
            dw.map(|d| Array::from_vec(vec![cout, cin, k, k], d)),
        ];
        if needs.len() > 2 {
            grads.push(needs[2].then(|| {
                let mut db = vec![0.0f64; cout];
                for (i, plane) in gy.chunks(hw_out).enumerate() {
                    db[i % cout] += plane.iter().map(|v| v.as_f64()).sum::<f64>();
                }
                Array::from_vec(vec![cout], db.into_iter().map(T::of_f64).collect())
            }));
        }
        grads
    })
}

/// Depthwise convolution: one `k x k` filter per channel.
/// `x: (N, C, H, W)`, `w: (C, 1, k, k)`, `bias: (C)`.
pub fn depthwise_conv2d<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n, c, h, wd) = x.dims4();
    let (wc, one, k, k2) = w.dims4();
    assert!(wc == c && one == 1 && k == k2, "depthwise weight must be ({c}, 1, k, k), got {:?}", w.shape());
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[c], "depthwise bias shape");
    }
    let g = Geom {
        cin: c,
        h,
        w: wd,
        k,
        stride,
        pad,
        ho: conv_output_size(h, k, stride, pad),
        wo: conv_output_size(wd, k, stride, pad),
    };
    let (hw_in, hw_out) = (h * wd, g.ho * g.wo);
    add_macs((n * c * hw_out * k * k) as u64);

    let xv = x.value().clone();
    let wv = w.value().clone();
    let mut out = vec![T::zero(); n * c * hw_out];
    for p in 0..n * c {
        let ch = p % c;
        let src = &xv.data()[p * hw_in..][..hw_in];
        let dst = &mut out[p * hw_out..][..hw_out];
        let kern = &wv.data()[ch * k * k..][..k * k];
        if let Some(bv) = bias {
            dst.fill(bv.value().data()[ch]);
        }
        for_each_tap(&g, |ky, kx, oy, iy, xl, xh, ix0| {
            let wgt = kern[ky * k + kx];
            let d = &mut dst[oy * g.wo..][..g.wo];
            let s = &src[iy * g.w..][..g.w];
            if g.stride == 1 {
                for (dv, &sv) in d[xl..xh].iter_mut().zip(&s[ix0..ix0 + (xh - xl)]) {
                    *dv += wgt * sv;
                }
            } else {
                for j in 0..xh - xl {
                    d[xl + j] += wgt * s[ix0 + j * g.stride];
                }
            }
        });
    }
    let value = Array::from_vec(vec![n, c, g.ho, g.wo], out);

    let mut parents = vec![x.clone(), w.clone()];
    parents.extend(bias.cloned());
    Tensor::from_op(value, parents, move |gy, needs| {
        let gy = gy.data();
        let mut dx = needs[0].then(|| vec![T::zero(); n * c * hw_in]);
        let mut dw = needs[1].then(|| vec![0.0f64; c * k * k]);
        for p in 0..n * c {
            let ch = p % c;
            let src = &xv.data()[p * hw_in..][..hw_in];
            let gp = &gy[p * hw_out..][..hw_out];
            let kern = &wv.data()[ch * k * k..][..k * k];
            let mut dxp = dx.as_mut().map(|d| &mut d[p * hw_in..][..hw_in]);
            let mut acc = vec![T::zero(); k * k];
            for_each_tap(&g, |ky, kx, oy, iy, xl, xh, ix0| {
                let gr = &gp[oy * g.wo..][..g.wo];
                let s = &src[iy * g.w..][..g.w];
                if dw.is_some() {
                    let mut a = T::zero();
                    for j in 0..xh - xl {
                        a += gr[xl + j] * s[ix0 + j * g.stride];
                    }
                    acc[ky * k + kx] += a;
                }
                if let Some(dxp) = dxp.as_mut() {
                    let wgt = kern[ky * k + kx];
                    let d = &mut dxp[iy * g.w..][..g.w];
                    for j in 0..xh - xl {
                        d[ix0 + j * g.stride] += wgt * gr[xl + j];
                    }
                }
            });
            if let Some(dw) = dw.as_mut() {
                for (t, a) in acc.iter().enumerate() {
                    dw[ch * k * k + t] += a.as_f64();
                }
            }
        }
        let mut grads = vec![
            dx.map(|d| Array::from_vec(vec![n, c, h, wd], d)),
            dw.map(|d| Array::from_vec(vec![c, 1, k, k], d.into_iter().map(T::of_f64).collect())),
        ];
        if needs.len() > 2 {
            grads.push(needs[2].then(|| {
                let mut db = vec![0.0f64; c];
                for (i, plane) in gy.chunks(hw_out).enumerate() {
                    db[i % c] += plane.iter().map(|v| v.as_f64()).sum::<f64>();
                }
                Array::from_vec(vec![c], db.into_iter().map(T::of_f64).collect())
            }));
        }
        grads
    })
}

/// Visit every (tap, output row) pair that touches the input, with the
/// valid output column range and the first input column.
#[inline]
fn for_each_tap(g: &Geom, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize)) {
    for ky in 0..g.k {
        let (yl, yh) = valid_range(ky, g.pad, g.stride, g.h, g.ho);
        for kx in 0..g.k {
            let (xl, xh) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
            if xl >= xh {
                continue;
            }
            let ix0 = xl * g.stride + kx - g.pad;
            for oy in yl..yh {
                let iy = oy * g.stride + ky - g.pad;
                f(ky, kx, oy, iy, xl, xh, ix0);
            }
        }
    }
}
