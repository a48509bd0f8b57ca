use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::blursynth::{marker_bits, MarkerLayout, MARKER_CELLS};
use crate::error::{contract, Error, Result};
use crate::image::ImageTensor;

/// Wire contract spoken by external detector executables.
pub const WIRE_CONTRACT: &str = "stdin: one JSON object per line {\"image_path\": str, \"detector\": str}; \
stdout: one line per request {\"image_path\": str, \"markers\": [{\"id\": int, \"corners\": [[x, y] x 4]}]}; \
exit status 0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Apriltag3Family,
    ArucoFamily,
    Stub,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Apriltag3Family => "apriltag3-family",
            DetectorKind::ArucoFamily => "aruco-family",
            DetectorKind::Stub => "stub",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerDetection {
    pub id: i64,
    pub corners: [[f64; 2]; 4],
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segments_cross(p: [f64; 2], q: [f64; 2], r: [f64; 2], s: [f64; 2]) -> bool {
    let d1 = cross(r, s, p);
    let d2 = cross(r, s, q);
    let d3 = cross(p, q, r);
    let d4 = cross(p, q, s);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
}

/// Finite corners, non-zero area and no crossing opposite edges.
pub fn is_simple_quad(c: &[[f64; 2]; 4]) -> bool {
    if c.iter().flatten().any(|v| !v.is_finite()) {
        return false;
    }
    let area2: f64 = (0..4).map(|i| c[i][0] * c[(i + 1) % 4][1] - c[(i + 1) % 4][0] * c[i][1]).sum();
    area2.abs() > 1e-9 && !segments_cross(c[0], c[1], c[2], c[3]) && !segments_cross(c[1], c[2], c[3], c[0])
}

impl MarkerDetection {
    pub fn validate(&self) -> Result<()> {
        if self.id < 0 {
            return Err(contract(format!("marker id must be >= 0, got {}", self.id)));
        }
        if !is_simple_quad(&self.corners) {
            return Err(contract(format!("marker {} corners are not a simple quadrilateral: {:?}", self.id, self.corners)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub detector: DetectorKind,
    pub markers: Vec<MarkerDetection>,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        self.markers.iter().try_for_each(MarkerDetection::validate)
    }
}

/// One image handed to a detector. `expected` carries ground-truth marker
/// placement when the corpus knows it; real detectors ignore it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionInput {
    pub image_id: String,
    pub path: PathBuf,
    #[serde(default)]
    pub expected: Vec<MarkerLayout>,
}

pub trait DetectorAdapter {
    fn kind(&self) -> DetectorKind;

    /// One outcome per input, in order. An `Err` marks an image the detector
    /// failed on.
    fn detect(&mut self, inputs: &[DetectionInput]) -> Vec<std::result::Result<DetectionRecord, String>>;
}

/// Returns preset detections per image id, and none for unknown ids.
#[derive(Clone, Debug, Default)]
pub struct FixedStub {
    pub detections: HashMap<String, Vec<MarkerDetection>>,
    /// Image ids that simulate a detector crash.
    pub failing: Vec<String>,
}

impl DetectorAdapter for FixedStub {
    fn kind(&self) -> DetectorKind {
        DetectorKind::Stub
    }

    fn detect(&mut self, inputs: &[DetectionInput]) -> Vec<std::result::Result<DetectionRecord, String>> {
        inputs
            .iter()
            .map(|i| {
                if self.failing.contains(&i.image_id) {
                    return Err(format!("stub failure on {}", i.image_id));
                }
                Ok(DetectionRecord {
                    image_id: i.image_id.clone(),
                    detector: DetectorKind::Stub,
                    markers: self.detections.get(&i.image_id).cloned().unwrap_or_default(),
                })
            })
            .collect()
    }
}

/// Minimum white-minus-black luma for a marker to count as readable.
pub const MIN_MARKER_CONTRAST: f64 = 0.25;

/// Reads the synthetic markers at their known positions: a marker is detected
/// when its quiet zone, border and every payload bit land on the right side
/// of a threshold halfway between the dark and light cell means.
#[derive(Clone, Debug, Default)]
pub struct LayoutDecoderStub;

fn bilinear(img: &ImageTensor, luma: &[f64], x: f64, y: f64) -> Option<f64> {
    let (h, w) = (img.height(), img.width());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |yy: usize, xx: usize| luma[yy * w + xx];
    Some(
        (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1)),
    )
}

/// Mean luma of cell `(u, v)` in marker-cell coordinates, sampled on the
/// inner half of the cell.
fn cell_value(img: &ImageTensor, luma: &[f64], corners: &[[f64; 2]; 4], u: i32, v: i32) -> Option<f64> {
    let n = MARKER_CELLS as f64;
    let mut acc = 0.0;
    for dy in [0.3, 0.5, 0.7] {
        for dx in [0.3, 0.5, 0.7] {
            let (s, t) = ((u as f64 + dx) / n, (v as f64 + dy) / n);
            let p = |k: usize| {
                (1.0 - s) * (1.0 - t) * corners[0][k]
                    + s * (1.0 - t) * corners[1][k]
                    + s * t * corners[2][k]
                    + (1.0 - s) * t * corners[3][k]
            };
            // Pixel centers sit at integer coordinates.
            acc += bilinear(img, luma, p(0) - 0.5, p(1) - 0.5)?;
        }
    }
    Some(acc / 9.0)
}

/// Whether the marker in `layout` reads correctly from `img`.
pub fn decode_marker(img: &ImageTensor, luma: &[f64], layout: &MarkerLayout) -> bool {
    let n = MARKER_CELLS as i32;
    let bits = marker_bits(layout.id);
    let (mut light, mut dark) = (Vec::new(), Vec::new());
    for v in -1..=n {
        for u in -1..=n {
            let Some(val) = cell_value(img, luma, &layout.corners, u, v) else {
                return false;
            };
            let white = if u < 0 || v < 0 || u >= n || v >= n {
                true
            } else if u == 0 || v == 0 || u == n - 1 || v == n - 1 {
                false
            } else {
                bits >> ((v - 1) * 4 + (u - 1)) & 1 == 1
            };
            if white {
                light.push(val);
            } else {
                dark.push(val);
            }
        }
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (ml, md) = (mean(&light), mean(&dark));
    if ml - md < MIN_MARKER_CONTRAST {
        return false;
    }
    let t = 0.5 * (ml + md);
    light.iter().all(|&v| v > t) && dark.iter().all(|&v| v < t)
}

impl DetectorAdapter for LayoutDecoderStub {
    fn kind(&self) -> DetectorKind {
        DetectorKind::Stub
    }

    fn detect(&mut self, inputs: &[DetectionInput]) -> Vec<std::result::Result<DetectionRecord, String>> {
        inputs
            .iter()
            .map(|i| {
                let img = ImageTensor::load_png(&i.path).map_err(|e| e.to_string())?;
                let luma = img.luma();
                let markers = i
                    .expected
                    .iter()
                    .filter(|m| decode_marker(&img, &luma, m))
                    .map(|m| MarkerDetection { id: m.id as i64, corners: m.corners })
                    .collect();
                Ok(DetectionRecord { image_id: i.image_id.clone(), detector: DetectorKind::Stub, markers })
            })
            .collect()
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    image_path: &'a str,
    detector: &'a str,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireResponse {
    image_path: String,
    markers: Vec<MarkerDetection>,
}

/// Runs an external detector executable once per batch over JSON lines.
#[derive(Clone, Debug)]
pub struct ProcessAdapter {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub detector: DetectorKind,
    pub batch_size: usize,
}

fn find_program(program: &Path) -> Option<PathBuf> {
    if program.components().count() > 1 {
        return program.is_file().then(|| program.to_path_buf());
    }
    std::env::var_os("PATH")
        .and_then(|paths| std::env::split_paths(&paths).map(|d| d.join(program)).find(|p| p.is_file()))
}

impl ProcessAdapter {
    /// Locate the executable and check that it answers an empty request
    /// stream cleanly.
    pub fn new(program: &Path, args: Vec<String>, detector: DetectorKind, batch_size: usize) -> Result<Self> {
        let Some(found) = find_program(program) else {
            return Err(Error::Adapter(format!(
                "detector executable `{}` not found; it must implement the JSON-lines contract ({WIRE_CONTRACT})",
                program.display()
            )));
        };
        let a = Self { program: found, args, detector, batch_size: batch_size.max(1) };
        let replies = a.run(&[]).map_err(|e| Error::Adapter(format!("handshake with `{}` failed: {e}", program.display())))?;
        if !replies.is_empty() {
            return Err(Error::Adapter(format!("`{}` answered an empty request stream", program.display())));
        }
        Ok(a)
    }

    fn run(&self, inputs: &[DetectionInput]) -> std::result::Result<HashMap<String, Vec<MarkerDetection>>, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("spawning {}: {e}", self.program.display()))?;
        let mut req = String::new();
        for i in inputs {
            let line = serde_json::to_string(&WireRequest { image_path: &i.path.to_string_lossy(), detector: self.detector.as_str() })
                .map_err(|e| e.to_string())?;
            req.push_str(&line);
            req.push('\n');
        }
        let mut stdin = child.stdin.take().ok_or("no stdin")?;
        let writer = std::thread::spawn(move || stdin.write_all(req.as_bytes()));
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        let _ = writer.join();
        if !out.status.success() {
            return Err(format!("exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()));
        }
        let mut replies = HashMap::new();
        for line in String::from_utf8_lossy(&out.stdout).lines().filter(|l| !l.trim().is_empty()) {
            let r: WireResponse = serde_json::from_str(line).map_err(|e| format!("malformed response line `{line}`: {e}"))?;
            replies.insert(r.image_path, r.markers);
        }
        Ok(replies)
    }

    fn record(&self, input: &DetectionInput, replies: &HashMap<String, Vec<MarkerDetection>>) -> std::result::Result<DetectionRecord, String> {
        let markers = replies
            .get(&*input.path.to_string_lossy())
            .ok_or_else(|| format!("no response for {}", input.path.display()))?;
        let rec = DetectionRecord { image_id: input.image_id.clone(), detector: self.detector, markers: markers.clone() };
        rec.validate().map_err(|e| e.to_string())?;
        Ok(rec)
    }
}

impl DetectorAdapter for ProcessAdapter {
    fn kind(&self) -> DetectorKind {
        self.detector
    }

    fn detect(&mut self, inputs: &[DetectionInput]) -> Vec<std::result::Result<DetectionRecord, String>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(self.batch_size) {
            match self.run(chunk) {
                Ok(replies) => out.extend(chunk.iter().map(|i| self.record(i, &replies))),
                // Isolate the failing image by retrying one at a time.
                Err(_) if chunk.len() > 1 => {
                    for i in chunk {
                        out.push(self.run(std::slice::from_ref(i)).and_then(|r| self.record(i, &r)));
                    }
                }
                Err(e) => out.push(Err(e)),
            }
        }
        out
    }
}

/// A named set of images, index-aligned with the other sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSet {
    pub name: String,
    pub images: Vec<DetectionInput>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: String,
    pub detected: usize,
    /// Set when the detector failed; `detected` is then 0.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetDetections {
    pub name: String,
    pub images: Vec<ImageDetections>,
    pub detected: usize,
    pub errors: usize,
    /// `detected / detected(reference)`; `None` when the reference found nothing.
    pub rate: Option<f64>,
}

/// `detected / reference`, or `None` for an empty reference.
pub fn detection_rate(detected: usize, reference: usize) -> Option<f64> {
    (reference > 0).then(|| detected as f64 / reference as f64)
}

/// Per-set totals and rates relative to the set named `reference`.
pub fn marker_detection_rate(
    sets: &[ImageSet],
    reference: &str,
    adapter: &mut dyn DetectorAdapter,
) -> Result<Vec<SetDetections>> {
    let Some(refset) = sets.iter().find(|s| s.name == reference) else {
        return Err(contract(format!("no image set named `{reference}`")));
    };
    let mut names = BTreeMap::new();
    for s in sets {
        if names.insert(s.name.as_str(), ()).is_some() {
            return Err(contract(format!("duplicate image set `{}`", s.name)));
        }
        if s.images.len() != refset.images.len()
            || s.images.iter().zip(&refset.images).any(|(a, b)| a.image_id != b.image_id)
        {
            return Err(contract(format!("image set `{}` is not index-aligned with `{reference}`", s.name)));
        }
    }
    let mut out: Vec<SetDetections> = sets
        .iter()
        .map(|s| {
            let outcomes = adapter.detect(&s.images);
            let images: Vec<ImageDetections> = s
                .images
                .iter()
                .zip(outcomes.into_iter().chain(std::iter::repeat_with(|| Err("no outcome".to_string()))))
                .map(|(i, r)| match r {
                    Ok(rec) => ImageDetections { image_id: i.image_id.clone(), detected: rec.markers.len(), error: None },
                    Err(e) => {
                        log::warn!("detector failed on {} ({}): {e}", i.image_id, s.name);
                        ImageDetections { image_id: i.image_id.clone(), detected: 0, error: Some(e) }
                    }
                })
                .collect();
            SetDetections {
                name: s.name.clone(),
                detected: images.iter().map(|i| i.detected).sum(),
                errors: images.iter().filter(|i| i.error.is_some()).count(),
                images,
                rate: None,
            }
        })
        .collect();
    let ref_total = out.iter().find(|s| s.name == reference).map_or(0, |s| s.detected);
    for s in &mut out {
        s.rate = detection_rate(s.detected, ref_total);
    }
    Ok(out)
}
