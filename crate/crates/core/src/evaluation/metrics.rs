use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::image::{ImageTensor, ValueRange};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    /// The images were identical and `db` is the cap.
    pub exact: bool,
}

fn same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(contract(format!("image shapes differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    if a.range() != ValueRange::Unit || b.range() != ValueRange::Unit {
        return Err(contract("quality metrics expect [0, 1] images"));
    }
    Ok(())
}

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / n)
}

/// `10 log10(1 / MSE)` with peak 1, capped for identical inputs.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<Psnr> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(Psnr { db: PSNR_CAP_DB, exact: true });
    }
    Ok(Psnr { db: (10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB), exact: false })
}

fn gaussian_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &x[y * w..(y + 1) * w];
        for (xo, d) in rows[y * ow..(y + 1) * ow].iter_mut().enumerate() {
            *d = k.iter().zip(&src[xo..xo + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = k.iter().enumerate().map(|(i, kv)| kv * rows[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

/// Mean SSIM over Gaussian-weighted 11x11 windows of the BT.601 luma.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w, _) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(contract(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}")));
    }
    let (x, y) = (a.luma(), b.luma());
    let k = gaussian_kernel();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &k);
    let my = filter_valid(&y, h, w, &k);
    let sxx = filter_valid(&prod(&x, &x), h, w, &k);
    let syy = filter_valid(&prod(&y, &y), h, w, &k);
    let sxy = filter_valid(&prod(&x, &y), h, w, &k);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let n = mx.len() as f64;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(if x == y { 1.0 } else { total / n })
}
