use std::time::Instant;

use ghost_autograd::{Float, ParamStore};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::generator::Generator;
use crate::image::ImageTensor;

pub const MIN_WARMUP: usize = 3;
pub const MIN_REPEATS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub kind: String,
    pub cpu: String,
    pub threads: usize,
    pub os: String,
    pub arch: String,
}

impl DeviceDescriptor {
    /// The CPU this process runs on. The engine is single-threaded.
    pub fn current() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|v| v.trim().to_string()))
            .unwrap_or_else(|| "unknown".into());
        Self { kind: "cpu".into(), cpu, threads: 1, os: std::env::consts::OS.into(), arch: std::env::consts::ARCH.into() }
    }
}

/// A published latency kept for context only, never compared against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLatency {
    pub ms: f64,
    pub height: usize,
    pub width: usize,
    pub device: String,
}

pub fn published_reference_latency() -> ReferenceLatency {
    ReferenceLatency { ms: 37.0, height: 720, width: 1280, device: "desktop GPU (published figure)".into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub device: DeviceDescriptor,
    /// Always true: numbers depend on the machine that produced them.
    pub hardware_specific: bool,
    pub reference: ReferenceLatency,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

/// Wall-clock deblurring time per image, cycling through `images`.
pub fn benchmark_inference<T: Float>(
    gen: &Generator,
    store: &ParamStore<T>,
    images: &[ImageTensor],
    warmup: usize,
    repeats: usize,
) -> Result<LatencyStats> {
    if warmup < MIN_WARMUP || repeats < MIN_REPEATS {
        return Err(contract(format!(
            "benchmark needs warmup >= {MIN_WARMUP} and repeats >= {MIN_REPEATS}, got {warmup} and {repeats}"
        )));
    }
    let Some(first) = images.first() else {
        return Err(contract("benchmark needs at least one image"));
    };
    if images.iter().any(|i| i.dims() != first.dims()) {
        return Err(contract("benchmark images must share one size"));
    }
    for i in 0..warmup {
        gen.deblur(store, &images[i % images.len()])?;
    }
    let mut samples_ms = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let t = Instant::now();
        gen.deblur(store, &images[i % images.len()])?;
        samples_ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyStats {
        height: first.height(),
        width: first.width(),
        warmup,
        mean_ms: samples_ms.iter().sum::<f64>() / repeats as f64,
        p50_ms: percentile(&samples_ms, 50.0),
        p95_ms: percentile(&samples_ms, 95.0),
        samples_ms,
        device: DeviceDescriptor::current(),
        hardware_specific: true,
        reference: published_reference_latency(),
    })
}
