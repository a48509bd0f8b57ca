//! Images as `H x W x C` float arrays and their PNG representation.

use std::path::Path;

use ghost_autograd::{Array, Float};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Value range an [`ImageTensor`] is declared to live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueRange {
    /// `[0, 1]`, the storage domain.
    Unit,
    /// `[-1, 1]`, the network domain.
    Symmetric,
}

/// Interleaved `H x W x C` image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    range: ValueRange,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, range: ValueRange, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(contract(format!("empty image {height}x{width}x{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(contract(format!(
                "image buffer holds {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, range, data })
    }

    /// RGB image in `[0, 1]` from a per-pixel function.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self { height, width, channels: 3, range: ValueRange::Unit, data }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::from_fn(height, width, |_, _| [value; 3])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Check that every value is finite and inside the declared range.
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = match self.range {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Symmetric => (-1.0, 1.0),
        };
        if let Some(v) = self.data.iter().find(|v| !v.is_finite()) {
            return Err(contract(format!("image contains non-finite value {v}")));
        }
        if let Some(v) = self.data.iter().find(|&&v| v < lo || v > hi) {
            return Err(contract(format!("image value {v} outside declared range [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Map `[0, 1]` to `[-1, 1]`.
    pub fn to_network_domain(&self) -> Self {
        match self.range {
            ValueRange::Symmetric => self.clone(),
            ValueRange::Unit => self.with_data(ValueRange::Symmetric, self.data.iter().map(|v| 2.0 * v - 1.0).collect()),
        }
    }

    /// Map `[-1, 1]` to `[0, 1]`.
    pub fn to_unit_domain(&self) -> Self {
        match self.range {
            ValueRange::Unit => self.clone(),
            ValueRange::Symmetric => self.with_data(ValueRange::Unit, self.data.iter().map(|v| (v + 1.0) * 0.5).collect()),
        }
    }

    /// Same geometry and range, values replaced by `f(v)`.
    pub fn map_values(&self, f: impl Fn(f32) -> f32) -> Self {
        self.with_data(self.range, self.data.iter().map(|&v| f(v)).collect())
    }

    fn with_data(&self, range: ValueRange, data: Vec<f32>) -> Self {
        Self { height: self.height, width: self.width, channels: self.channels, range, data }
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width || height == 0 || width == 0 {
            return Err(contract(format!(
                "crop {height}x{width} at ({y0}, {x0}) outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[row..row + width * c]);
        }
        Ok(Self { height, width, channels: c, range: self.range, data })
    }

    /// Planar `(1, C, H, W)` array.
    pub fn to_array<T: Float>(&self) -> Array<T> {
        let (h, w, c) = self.dims();
        let mut out = vec![T::zero(); c * h * w];
        for (i, px) in self.data.chunks(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * h * w + i] = T::of_f64(v as f64);
            }
        }
        Array::from_vec(vec![1, c, h, w], out)
    }

    /// Image `n` of a planar `(N, C, H, W)` array.
    pub fn from_array<T: Float>(a: &Array<T>, n: usize, range: ValueRange) -> Result<Self> {
        let (bn, c, h, w) = a.dims4();
        if n >= bn {
            return Err(contract(format!("batch index {n} out of {bn}")));
        }
        let plane = &a.data()[n * c * h * w..(n + 1) * c * h * w];
        let mut data = vec![0.0f32; c * h * w];
        for ch in 0..c {
            for i in 0..h * w {
                data[i * c + ch] = plane[ch * h * w + i].as_f64() as f32;
            }
        }
        Self::new(h, w, c, range, data)
    }

    /// Stack equally sized images into `(N, C, H, W)`.
    pub fn stack<T: Float>(images: &[&ImageTensor]) -> Result<Array<T>> {
        let first = images.first().ok_or_else(|| contract("cannot stack zero images"))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if img.dims() != first.dims() {
                return Err(contract(format!("cannot stack {:?} with {:?}", img.dims(), first.dims())));
            }
            data.extend(img.to_array::<T>().into_vec());
        }
        let (h, w, c) = first.dims();
        Ok(Array::from_vec(vec![images.len(), c, h, w], data))
    }

    /// Quantize to 8 bits per channel (round to nearest, clamped).
    pub fn to_u8(&self) -> Vec<u8> {
        let unit = self.to_unit_domain();
        unit.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, 3, ValueRange::Unit, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        let rgb = img.to_rgb8();
        Self::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(contract(format!("PNG output needs 3 channels, image has {}", self.channels)));
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        image::save_buffer(path, &self.to_u8(), self.width as u32, self.height as u32, image::ExtendedColorType::Rgb8)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    /// BT.601 luma of an RGB image; single-channel images are returned as is.
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64).collect(),
            _ => self
                .data
                .chunks(self.channels)
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect(),
        }
    }
}
