use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{SceneLayout, LAYOUT_FILE, MARKER_CELLS};
use super::{synthesize_blur, validate_window, BlurJobSpec, DEFAULT_GAMMA, MAX_WINDOW, MIN_WINDOW};
use crate::error::{contract, Error, Result};
use crate::image::ImageTensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Inclusive range of odd window sizes, sampled uniformly.
    pub window_range: [usize; 2],
    /// Overrides `window_range` with a single size.
    pub fixed_window: Option<usize>,
    /// Frames between consecutive window starts.
    pub stride: usize,
    pub gamma: f64,
    /// Share of each scene's windows (the temporally last ones) held out
    /// for testing.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            window_range: [MIN_WINDOW, MAX_WINDOW],
            fixed_window: None,
            stride: MAX_WINDOW,
            gamma: DEFAULT_GAMMA,
            test_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let [lo, hi] = self.window_range;
        for n in [lo, hi].into_iter().chain(self.fixed_window) {
            if let Err(e) = validate_window(n) {
                p.push(e.to_string());
            }
        }
        if lo > hi {
            p.push(format!("window_range lower bound {lo} exceeds upper bound {hi}"));
        }
        if self.stride == 0 {
            p.push("stride must be positive".into());
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            p.push(format!("gamma must be finite and positive, got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            p.push(format!("test_fraction must be in [0, 1), got {}", self.test_fraction));
        }
        p
    }

    pub fn window_choices(&self) -> Vec<usize> {
        match self.fixed_window {
            Some(n) => vec![n],
            None => (self.window_range[0]..=self.window_range[1]).filter(|n| n % 2 == 1).collect(),
        }
    }

    fn max_window(&self) -> usize {
        *self.window_choices().iter().max().unwrap_or(&MAX_WINDOW)
    }
}

/// Marker outline in the sharp (middle) frame of a pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerLayout {
    pub id: u32,
    /// TL, TR, BR, BL in pixel coordinates.
    pub corners: [[f64; 2]; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub split: Split,
    pub scene: String,
    pub index: usize,
    /// Paths relative to the corpus root.
    pub blur: String,
    pub sharp: String,
    pub height: usize,
    pub width: usize,
    pub spec: BlurJobSpec,
    /// Known markers, when the source frames carry a layout sidecar.
    #[serde(default)]
    pub markers: Vec<MarkerLayout>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedWindow {
    pub scene: String,
    pub start: usize,
    pub n: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub version: u32,
    pub config: SynthConfig,
    pub pairs: Vec<PairRecord>,
    pub skipped: Vec<SkippedWindow>,
}

impl CorpusManifest {
    /// Structural checks that need no file access.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.version != MANIFEST_VERSION {
            p.push(format!("manifest version {} unsupported (expected {MANIFEST_VERSION})", self.version));
        }
        p.extend(self.config.problems());
        let mut seen = BTreeSet::new();
        for r in &self.pairs {
            let tag = format!("{}/{}/{}", r.split.as_str(), r.scene, r.index);
            if !seen.insert((r.split, r.scene.clone(), r.index)) {
                p.push(format!("{tag}: duplicate pair"));
            }
            if let Err(e) = r.spec.validate() {
                p.push(format!("{tag}: {e}"));
            }
            if (r.spec.gamma - self.config.gamma).abs() > 0.0 {
                p.push(format!("{tag}: gamma {} differs from corpus gamma {}", r.spec.gamma, self.config.gamma));
            }
            let expect = |kind: &str| format!("{}/{}/{kind}/{:06}.png", r.split.as_str(), r.scene, r.index);
            if r.blur != expect("blur") || r.sharp != expect("sharp") {
                p.push(format!("{tag}: paths {} / {} do not follow <split>/<scene>/{{blur,sharp}}/<index>.png", r.blur, r.sharp));
            }
            if r.height == 0 || r.width == 0 {
                p.push(format!("{tag}: empty image size"));
            }
        }
        p
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// PNG files of a directory in lexicographic order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

struct SceneSource {
    name: String,
    frames: Vec<PathBuf>,
    layout: Option<SceneLayout>,
}

fn scene_sources(frames_dir: &Path) -> Result<Vec<SceneSource>> {
    if !frames_dir.is_dir() {
        return Err(contract(format!("frames directory {} does not exist", frames_dir.display())));
    }
    let load_layout = |dir: &Path| -> Result<Option<SceneLayout>> {
        let p = dir.join(LAYOUT_FILE);
        p.is_file().then(|| SceneLayout::load(&p)).transpose()
    };
    let direct = list_frames(frames_dir)?;
    if !direct.is_empty() {
        let name = frames_dir.file_name().map_or("scene".into(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![SceneSource { name, frames: direct, layout: load_layout(frames_dir)? }]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(frames_dir)
        .map_err(|e| Error::io(format!("listing {}", frames_dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        let frames = list_frames(&d)?;
        if !frames.is_empty() {
            let name = d.file_name().unwrap().to_string_lossy().into_owned();
            out.push(SceneSource { name, frames, layout: load_layout(&d)? });
        }
    }
    if out.is_empty() {
        return Err(contract(format!("no PNG frames in {} or its subdirectories", frames_dir.display())));
    }
    Ok(out)
}

struct Job {
    scene: usize,
    index: usize,
    start: usize,
    n: usize,
    split: Split,
}

fn markers_in_frame(layout: &SceneLayout, t: usize) -> Vec<MarkerLayout> {
    let (h, w) = (layout.height as f64, layout.width as f64);
    layout
        .markers
        .iter()
        .filter_map(|m| {
            let corners = m.corners_at(layout.camera[t]);
            let q = m.size / MARKER_CELLS as f64;
            let inside = corners.iter().all(|&[x, y]| x >= q && y >= q && x <= w - q && y <= h - q);
            inside.then_some(MarkerLayout { id: m.id, corners })
        })
        .collect()
}

/// Synthesize a paired corpus from ordered sharp frames and write it with its
/// manifest under `out_dir`.
pub fn generate_dataset(frames_dir: &Path, out_dir: &Path, cfg: &SynthConfig) -> Result<CorpusManifest> {
    let p = cfg.problems();
    if !p.is_empty() {
        return Err(Error::ConfigList(p));
    }
    let scenes = scene_sources(frames_dir)?;
    let max_n = cfg.max_window();
    for s in &scenes {
        if s.frames.len() < max_n {
            return Err(contract(format!(
                "scene {} has {} frames, fewer than the largest window {max_n}",
                s.name,
                s.frames.len()
            )));
        }
    }

    let choices = cfg.window_choices();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jobs = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        let mut windows = Vec::new();
        let mut start = 0;
        loop {
            let n = *choices.choose(&mut rng).unwrap();
            if start + n > s.frames.len() {
                break;
            }
            windows.push((start, n));
            start += cfg.stride;
        }
        let n_test = (windows.len() as f64 * cfg.test_fraction).ceil() as usize;
        let first_test = windows.len() - n_test;
        for (wi, (start, n)) in windows.into_iter().enumerate() {
            let split = if wi >= first_test { Split::Test } else { Split::Train };
            let index = if split == Split::Test { wi - first_test } else { wi };
            jobs.push(Job { scene: si, index, start, n, split });
        }
    }

    let results: Vec<std::result::Result<PairRecord, SkippedWindow>> = jobs
        .par_iter()
        .map(|job| {
            let scene = &scenes[job.scene];
            let paths = &scene.frames[job.start..job.start + job.n];
            let skip = |reason: String| SkippedWindow { scene: scene.name.clone(), start: job.start, n: job.n, reason };
            let frames = paths.iter().map(|p| ImageTensor::load_png(p)).collect::<Result<Vec<_>>>();
            let frames = match frames {
                Ok(f) => f,
                Err(e) => {
                    log::warn!("skipping window at frame {} of {}: {e}", job.start, scene.name);
                    return Err(skip(e.to_string()));
                }
            };
            let ids = paths.iter().map(|p| format!("{}/{}", scene.name, p.file_name().unwrap().to_string_lossy())).collect();
            let spec = BlurJobSpec::new(ids, cfg.gamma).map_err(|e| skip(e.to_string()))?;
            let sample = synthesize_blur(&spec, &frames).map_err(|e| skip(e.to_string()))?;
            let rel = |kind: &str| format!("{}/{}/{kind}/{:06}.png", job.split.as_str(), scene.name, job.index);
            let (blur, sharp) = (rel("blur"), rel("sharp"));
            sample.blurred.save_png(&out_dir.join(&blur)).map_err(|e| skip(e.to_string()))?;
            sample.sharp.save_png(&out_dir.join(&sharp)).map_err(|e| skip(e.to_string()))?;
            let markers = scene
                .layout
                .as_ref()
                .filter(|l| l.camera.len() == scene.frames.len())
                .map_or_else(Vec::new, |l| markers_in_frame(l, job.start + spec.middle()));
            Ok(PairRecord {
                split: job.split,
                scene: scene.name.clone(),
                index: job.index,
                blur,
                sharp,
                height: sample.sharp.height(),
                width: sample.sharp.width(),
                spec,
                markers,
            })
        })
        .collect();

    let mut manifest = CorpusManifest { version: MANIFEST_VERSION, config: cfg.clone(), pairs: Vec::new(), skipped: Vec::new() };
    for r in results {
        match r {
            Ok(p) => manifest.pairs.push(p),
            Err(s) => manifest.skipped.push(s),
        }
    }
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    std::fs::write(&path, manifest.to_json()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(manifest)
}

/// A synthesized corpus on disk.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading corpus manifest {}", path.display()), e))?;
        let manifest: CorpusManifest = serde_json::from_str(&text)?;
        let p = manifest.problems();
        if !p.is_empty() {
            return Err(Error::ConfigList(p));
        }
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    /// Manifest checks plus existence of every referenced file.
    pub fn validate(&self) -> Result<()> {
        let mut p = self.manifest.problems();
        for r in &self.manifest.pairs {
            for rel in [&r.blur, &r.sharp] {
                if !self.root.join(rel).is_file() {
                    p.push(format!("missing file {rel}"));
                }
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(p))
        }
    }

    pub fn pairs(&self, split: Split) -> Vec<&PairRecord> {
        self.manifest.pairs.iter().filter(|r| r.split == split).collect()
    }

    /// `(blurred, sharp)` of one pair.
    pub fn load_pair(&self, rec: &PairRecord) -> Result<(ImageTensor, ImageTensor)> {
        let blur = ImageTensor::load_png(&self.root.join(&rec.blur))?;
        let sharp = ImageTensor::load_png(&self.root.join(&rec.sharp))?;
        if blur.dims() != sharp.dims() {
            return Err(contract(format!("pair {} has blurred {:?} and sharp {:?}", rec.blur, blur.dims(), sharp.dims())));
        }
        Ok((blur, sharp))
    }
}
