use ghost_autograd::ops::reflect_index;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::image::ImageTensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddingRecord {
    pub pad_top: usize,
    pub pad_bottom: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl PaddingRecord {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }

    /// Undo the padding on an image of the padded size.
    pub fn crop(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let h = img
            .height()
            .checked_sub(self.pad_top + self.pad_bottom)
            .ok_or_else(|| contract("image smaller than its padding"))?;
        let w = img
            .width()
            .checked_sub(self.pad_left + self.pad_right)
            .ok_or_else(|| contract("image smaller than its padding"))?;
        img.crop(self.pad_top, self.pad_left, h, w)
    }
}

/// Reflection-pad to the smallest multiple of `stride` on each axis, split as
/// evenly as possible (the extra pixel goes to the bottom/right).
pub fn pad_to_stride(img: &ImageTensor, stride: usize) -> Result<(ImageTensor, PaddingRecord)> {
    pad_to_multiple(img, stride, 0)
}

/// Like [`pad_to_stride`], but each side is also at least `min_side` (rounded
/// up to the stride).
pub fn pad_to_multiple(img: &ImageTensor, stride: usize, min_side: usize) -> Result<(ImageTensor, PaddingRecord)> {
    if stride == 0 {
        return Err(contract("padding stride must be positive"));
    }
    let (h, w, c) = img.dims();
    let up = |n: usize| n.max(min_side).div_ceil(stride) * stride;
    let (th, tw) = (up(h), up(w));
    let rec = PaddingRecord {
        pad_top: (th - h) / 2,
        pad_bottom: th - h - (th - h) / 2,
        pad_left: (tw - w) / 2,
        pad_right: tw - w - (tw - w) / 2,
    };
    if rec.is_zero() {
        return Ok((img.clone(), rec));
    }
    let mut data = Vec::with_capacity(th * tw * c);
    for y in 0..th {
        let sy = reflect_index(y as isize - rec.pad_top as isize, h);
        for x in 0..tw {
            let sx = reflect_index(x as isize - rec.pad_left as isize, w);
            data.extend_from_slice(img.pixel(sy, sx));
        }
    }
    Ok((ImageTensor::new(th, tw, c, img.range(), data)?, rec))
}
