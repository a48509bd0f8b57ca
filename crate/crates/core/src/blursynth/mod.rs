//! Paired blurred/sharp data by averaging consecutive sharp frames in the
//! linear sensor domain.

mod corpus;
mod scene;

pub use corpus::{
    generate_dataset, list_frames, Corpus, CorpusManifest, MarkerLayout, PairRecord, SkippedWindow, Split, SynthConfig,
    MANIFEST_FILE, MANIFEST_VERSION,
};
pub use scene::{marker_bits, render_procedural, ProceduralConfig, SceneLayout, WorldMarker, LAYOUT_FILE, MARKER_CELLS};

use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};
use crate::image::{ImageTensor, ValueRange};

pub const DEFAULT_GAMMA: f64 = 2.2;
pub const MIN_WINDOW: usize = 3;
pub const MAX_WINDOW: usize = 11;

fn check_unit(img: &ImageTensor, what: &str) -> Result<()> {
    if img.range() != ValueRange::Unit {
        return Err(contract(format!("{what} must be declared in [0, 1]")));
    }
    img.validate().map_err(|e| contract(format!("{what}: {e}")))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(contract(format!("gamma must be finite and positive, got {gamma}")))
    }
}

/// Camera response `x^(1/gamma)`, linear signal to observed intensity.
pub fn crf_apply(signal: &ImageTensor, gamma: f64) -> Result<ImageTensor> {
    check_gamma(gamma)?;
    check_unit(signal, "CRF input")?;
    let inv = 1.0 / gamma;
    Ok(signal.map_values(|v| (v as f64).powf(inv) as f32))
}

/// Inverse camera response `x^gamma`.
pub fn crf_invert(observed: &ImageTensor, gamma: f64) -> Result<ImageTensor> {
    check_gamma(gamma)?;
    check_unit(observed, "CRF input")?;
    Ok(observed.map_values(|v| (v as f64).powf(gamma) as f32))
}

/// One synthetic exposure: which frames are averaged and under which response
/// curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurJobSpec {
    /// Source frame identifiers in temporal order.
    pub frames: Vec<String>,
    pub n: usize,
    pub gamma: f64,
}

impl BlurJobSpec {
    pub fn new(frames: Vec<String>, gamma: f64) -> Result<Self> {
        let spec = Self { n: frames.len(), frames, gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        validate_window(self.n)?;
        if self.frames.len() != self.n {
            return Err(config(format!("blur job lists {} frames for a window of {}", self.frames.len(), self.n)));
        }
        check_gamma(self.gamma)
    }

    pub fn middle(&self) -> usize {
        self.n / 2
    }

    pub fn middle_frame(&self) -> &str {
        &self.frames[self.middle()]
    }
}

/// Window sizes are odd and within `[3, 11]`.
pub fn validate_window(n: usize) -> Result<()> {
    if n % 2 == 0 || !(MIN_WINDOW..=MAX_WINDOW).contains(&n) {
        return Err(config(format!("window size must be odd and in [{MIN_WINDOW}, {MAX_WINDOW}], got {n}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub blurred: ImageTensor,
    pub sharp: ImageTensor,
    pub spec: BlurJobSpec,
}

/// Linear-domain average of `frames`, mapped back through the response curve.
/// The middle frame is the sharp target.
pub fn synthesize_blur(spec: &BlurJobSpec, frames: &[ImageTensor]) -> Result<PairedSample> {
    spec.validate()?;
    if frames.len() != spec.n {
        return Err(contract(format!("blur job expects {} frames, got {}", spec.n, frames.len())));
    }
    let dims = frames[0].dims();
    for (i, f) in frames.iter().enumerate() {
        if f.dims() != dims {
            return Err(contract(format!("frame {i} is {:?}, frame 0 is {dims:?}", f.dims())));
        }
        check_unit(f, &format!("frame {i}"))?;
    }
    let mut acc = vec![0.0f64; frames[0].data().len()];
    for f in frames {
        for (a, &v) in acc.iter_mut().zip(f.data()) {
            *a += (v as f64).powf(spec.gamma);
        }
    }
    let (inv_n, inv_g) = (1.0 / spec.n as f64, 1.0 / spec.gamma);
    let data = acc.into_iter().map(|s| (s * inv_n).powf(inv_g).clamp(0.0, 1.0) as f32).collect();
    let (h, w, c) = dims;
    Ok(PairedSample {
        blurred: ImageTensor::new(h, w, c, ValueRange::Unit, data)?,
        sharp: frames[spec.middle()].clone(),
        spec: spec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn crf_endpoints_and_gray() {
        let img = ImageTensor::from_fn(1, 3, |_, x| [[0.0, 0.5, 1.0][x]; 3]);
        let out = crf_apply(&img, 2.2).unwrap();
        assert_eq!(out.pixel(0, 0)[0], 0.0);
        assert_eq!(out.pixel(0, 2)[0], 1.0);
        assert!((out.pixel(0, 1)[0] as f64 - 0.729_740).abs() < 1e-5);
        assert_eq!(crf_apply(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn crf_rejects_out_of_range() {
        let img = ImageTensor::new(1, 1, 3, ValueRange::Unit, vec![1.5, 0.0, 0.0]).unwrap();
        assert!(crf_apply(&img, 2.2).is_err());
        assert!(crf_invert(&img, 2.2).is_err());
        assert!(crf_apply(&ImageTensor::filled(1, 1, 0.5), 0.0).is_err());
    }

    #[test]
    fn window_validation() {
        for n in [3, 5, 7, 9, 11] {
            assert!(validate_window(n).is_ok());
        }
        for n in [0, 1, 2, 4, 10, 12, 13] {
            assert!(validate_window(n).is_err());
        }
        assert!(BlurJobSpec::new(ids(4), 2.2).is_err());
    }

    #[test]
    fn middle_frame_is_the_target() {
        let frames: Vec<_> = (0..5).map(|i| ImageTensor::filled(2, 2, i as f32 / 8.0)).collect();
        let s = synthesize_blur(&BlurJobSpec::new(ids(5), 2.2).unwrap(), &frames).unwrap();
        assert_eq!(s.sharp, frames[2]);
        assert_eq!(s.spec.middle_frame(), "f2");
    }

    #[test]
    fn mismatched_frames_are_rejected() {
        let mut frames: Vec<_> = (0..3).map(|_| ImageTensor::filled(2, 2, 0.2)).collect();
        let spec = BlurJobSpec::new(ids(3), 2.2).unwrap();
        assert!(synthesize_blur(&spec, &frames[..2]).is_err());
        frames[1] = ImageTensor::filled(2, 3, 0.2);
        assert!(synthesize_blur(&spec, &frames).is_err());
    }
}
