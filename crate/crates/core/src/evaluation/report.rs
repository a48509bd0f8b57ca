use std::path::{Path, PathBuf};

use ghost_autograd::{Float, ParamStore};
use serde::{Deserialize, Serialize};

use super::benchmark::LatencyStats;
use super::cost::{FlopReport, LighteningReport, SizeReport};
use super::detection::{DetectionInput, DetectorKind, ImageSet, SetDetections};
use super::metrics::{psnr, ssim};
use crate::blursynth::{Corpus, Split};
use crate::error::{contract, Error, Result};
use crate::generator::Generator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageQuality {
    pub image_id: String,
    pub psnr_blurred: f64,
    pub psnr_deblurred: f64,
    pub ssim_blurred: f64,
    pub ssim_deblurred: f64,
    /// PSNR hit the cap because the images were identical.
    pub exact_blurred: bool,
    pub exact_deblurred: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, median: f64::NAN };
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        Self { mean: values.iter().sum::<f64>() / n as f64, median }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityAggregates {
    pub psnr_blurred: Aggregate,
    pub psnr_deblurred: Aggregate,
    pub ssim_blurred: Aggregate,
    pub ssim_deblurred: Aggregate,
}

impl QualityAggregates {
    pub fn of(rows: &[ImageQuality]) -> Self {
        let col = |f: fn(&ImageQuality) -> f64| Aggregate::of(&rows.iter().map(f).collect::<Vec<_>>());
        Self {
            psnr_blurred: col(|r| r.psnr_blurred),
            psnr_deblurred: col(|r| r.psnr_deblurred),
            ssim_blurred: col(|r| r.ssim_blurred),
            ssim_deblurred: col(|r| r.ssim_deblurred),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeSection {
    pub gflops: f64,
    pub gmacs: f64,
    pub backbone_gmacs: f64,
    pub flops: FlopReport,
    pub lightening: LighteningReport,
    pub size: SizeReport,
    pub model_mb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSection {
    pub detector: DetectorKind,
    pub reference_set: String,
    pub sets: Vec<SetDetections>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus_id: String,
    pub checkpoint: Option<PathBuf>,
    pub images: Vec<ImageQuality>,
    pub aggregates: QualityAggregates,
    pub compute: Option<ComputeSection>,
    pub latency: Option<LatencyStats>,
    pub detection: Option<DetectionSection>,
}

impl EvalReport {
    /// Re-derive every aggregate and total from the per-image rows.
    pub fn check_consistency(&self) -> Result<()> {
        let re = QualityAggregates::of(&self.images);
        let same = |a: Aggregate, b: Aggregate| {
            (a.mean.is_nan() && b.mean.is_nan()) || ((a.mean - b.mean).abs() < 1e-9 && (a.median - b.median).abs() < 1e-9)
        };
        let pairs = [
            (re.psnr_blurred, self.aggregates.psnr_blurred),
            (re.psnr_deblurred, self.aggregates.psnr_deblurred),
            (re.ssim_blurred, self.aggregates.ssim_blurred),
            (re.ssim_deblurred, self.aggregates.ssim_deblurred),
        ];
        if !pairs.iter().all(|&(a, b)| same(a, b)) {
            return Err(contract("quality aggregates do not match the per-image rows"));
        }
        if let Some(d) = &self.detection {
            let reference = d.sets.iter().find(|s| s.name == d.reference_set).map_or(0, |s| s.detected);
            for s in &d.sets {
                let total: usize = s.images.iter().map(|i| i.detected).sum();
                let errors = s.images.iter().filter(|i| i.error.is_some()).count();
                let rate_ok = match s.rate {
                    Some(r) => reference > 0 && r == s.detected as f64 / reference as f64,
                    None => reference == 0,
                };
                if total != s.detected || errors != s.errors || !rate_ok {
                    return Err(contract(format!("detection totals for `{}` do not match its rows", s.name)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Quality rows for a corpus split plus the image sets for detection.
#[derive(Clone, Debug)]
pub struct QualityRun {
    pub rows: Vec<ImageQuality>,
    /// `sharp`, `blurred` and `deblurred`, index-aligned.
    pub sets: Vec<ImageSet>,
}

/// Deblur every pair of `split`, writing outputs under
/// `out_dir/deblurred/<scene>/<index>.png`, and score them.
pub fn evaluate_split<T: Float>(
    corpus: &Corpus,
    split: Split,
    gen: &Generator,
    store: &ParamStore<T>,
    out_dir: &Path,
) -> Result<QualityRun> {
    let pairs = corpus.pairs(split);
    if pairs.is_empty() {
        return Err(contract(format!("corpus {} has no {} pairs", corpus.root.display(), split.as_str())));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    let mut sets: Vec<ImageSet> =
        ["sharp", "blurred", "deblurred"].iter().map(|n| ImageSet { name: n.to_string(), images: Vec::new() }).collect();
    for rec in pairs {
        let (blurred, sharp) = corpus.load_pair(rec)?;
        let deblurred = gen.deblur(store, &blurred)?;
        let image_id = format!("{}/{:06}", rec.scene, rec.index);
        let path = out_dir.join("deblurred").join(&rec.scene).join(format!("{:06}.png", rec.index));
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?;
        }
        deblurred.save_png(&path)?;
        // Score the image as written so detection and metrics see the same pixels.
        let deblurred = crate::image::ImageTensor::load_png(&path)?;
        let (pb, pd) = (psnr(&blurred, &sharp)?, psnr(&deblurred, &sharp)?);
        rows.push(ImageQuality {
            image_id: image_id.clone(),
            psnr_blurred: pb.db,
            psnr_deblurred: pd.db,
            ssim_blurred: ssim(&blurred, &sharp)?,
            ssim_deblurred: ssim(&deblurred, &sharp)?,
            exact_blurred: pb.exact,
            exact_deblurred: pd.exact,
        });
        for (set, p) in sets.iter_mut().zip([corpus.root.join(&rec.sharp), corpus.root.join(&rec.blur), path]) {
            set.images.push(DetectionInput { image_id: image_id.clone(), path: p, expected: rec.markers.clone() });
        }
    }
    Ok(QualityRun { rows, sets })
}
