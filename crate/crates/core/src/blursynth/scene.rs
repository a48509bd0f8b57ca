use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::image::ImageTensor;

/// Sidecar written next to procedural frames.
pub const LAYOUT_FILE: &str = "layout.json";

/// Cells per marker side, border included.
pub const MARKER_CELLS: usize = 6;

/// Procedural fiducial scenes seen by a translating camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProceduralConfig {
    pub scenes: usize,
    pub frames_per_scene: usize,
    pub height: usize,
    pub width: usize,
    pub markers_per_scene: usize,
    /// Upper bound of camera speed in pixels per frame.
    pub max_speed: f64,
    pub seed: u64,
}

impl Default for ProceduralConfig {
    fn default() -> Self {
        Self { scenes: 8, frames_per_scene: 33, height: 256, width: 256, markers_per_scene: 3, max_speed: 1.5, seed: 0 }
    }
}

impl ProceduralConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.scenes == 0 || self.frames_per_scene == 0 {
            p.push("procedural scenes and frames_per_scene must be positive".into());
        }
        if self.height < 64 || self.width < 64 {
            p.push(format!("procedural frames must be at least 64x64, got {}x{}", self.height, self.width));
        }
        if !(self.max_speed.is_finite() && self.max_speed >= 0.0) {
            p.push(format!("procedural max_speed must be finite and >= 0, got {}", self.max_speed));
        }
        p
    }

    pub fn marker_size(&self) -> usize {
        let cell = (self.height.min(self.width) / 5 / MARKER_CELLS).max(2);
        cell * MARKER_CELLS
    }
}

/// A square marker fixed in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldMarker {
    pub id: u32,
    /// Top-left corner of the black border.
    pub x: f64,
    pub y: f64,
    pub size: f64,
}

impl WorldMarker {
    /// Payload bits of the inner 4x4 grid, row-major, `1` = white.
    pub fn bits(&self) -> u16 {
        marker_bits(self.id)
    }

    /// Body corners (TL, TR, BR, BL) in the image of a camera at `offset`.
    pub fn corners_at(&self, offset: [f64; 2]) -> [[f64; 2]; 4] {
        let (x, y, s) = (self.x - offset[0], self.y - offset[1], self.size);
        [[x, y], [x + s, y], [x + s, y + s], [x, y + s]]
    }

    /// Intensity at a world point inside the quiet zone, `None` outside.
    fn sample(&self, wx: f64, wy: f64) -> Option<f32> {
        let cell = self.size / MARKER_CELLS as f64;
        let (u, v) = ((wx - self.x) / cell, (wy - self.y) / cell);
        let q = MARKER_CELLS as f64 + 1.0;
        if u < -1.0 || v < -1.0 || u >= q || v >= q {
            return None;
        }
        if u < 0.0 || v < 0.0 || u >= MARKER_CELLS as f64 || v >= MARKER_CELLS as f64 {
            return Some(1.0);
        }
        let (cu, cv) = (u as usize, v as usize);
        if cu == 0 || cv == 0 || cu == MARKER_CELLS - 1 || cv == MARKER_CELLS - 1 {
            return Some(0.0);
        }
        let bit = (cv - 1) * 4 + (cu - 1);
        Some(if self.bits() >> bit & 1 == 1 { 1.0 } else { 0.0 })
    }
}

/// Deterministic 16-bit payload with at least four set and four clear bits.
pub fn marker_bits(id: u32) -> u16 {
    let mut z = (id as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    loop {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        let b = z as u16;
        if (4..=12).contains(&b.count_ones()) {
            return b;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Shape {
    disc: bool,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    color: [f32; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: [f32; 3],
}

/// Everything needed to re-render a scene and to locate its markers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub scene: String,
    pub height: usize,
    pub width: usize,
    pub markers: Vec<WorldMarker>,
    /// Camera offset (x, y) per frame; pixel `(i, j)` sees world point
    /// `(j + 0.5 + ox, i + 0.5 + oy)`.
    pub camera: Vec<[f64; 2]>,
    pub frame_files: Vec<String>,
    base: [f32; 3],
    waves: Vec<Wave>,
    shapes: Vec<Shape>,
}

impl SceneLayout {
    fn random(name: String, cfg: &ProceduralConfig, rng: &mut ChaCha8Rng, first_id: u32) -> Self {
        let (h, w) = (cfg.height as f64, cfg.width as f64);
        let speed = rng.gen_range(0.25..=1.0) * cfg.max_speed;
        let dir = rng.gen_range(0.0..std::f64::consts::TAU);
        let (wobble, omega, phi) = (rng.gen_range(0.0..0.5) * speed, rng.gen_range(0.1..0.6), rng.gen_range(0.0..6.28));
        let mid = (cfg.frames_per_scene / 2) as f64;
        let camera: Vec<[f64; 2]> = (0..cfg.frames_per_scene)
            .map(|t| {
                let t = t as f64 - mid;
                [speed * dir.cos() * t + wobble * (omega * t + phi).sin(), speed * dir.sin() * t + wobble * (omega * t).cos()]
            })
            .collect();

        let color = |rng: &mut ChaCha8Rng| [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        let base = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
        let waves = (0..3)
            .map(|_| {
                let period = rng.gen_range(8.0..64.0);
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / period;
                Wave { kx: k * a.cos(), ky: k * a.sin(), phase: rng.gen_range(0.0..6.28), amp: [0.08, 0.08, 0.08].map(|v: f32| v * rng.gen_range(0.3..1.0)) }
            })
            .collect();
        let span = 2.0 * speed * mid + 40.0;
        let shapes = (0..24)
            .map(|_| Shape {
                disc: rng.gen_bool(0.5),
                cx: rng.gen_range(-span..w + span),
                cy: rng.gen_range(-span..h + span),
                rx: rng.gen_range(4.0..28.0),
                ry: rng.gen_range(4.0..28.0),
                color: color(rng),
            })
            .collect();

        let size = cfg.marker_size() as f64;
        let quiet = size / MARKER_CELLS as f64;
        let margin = quiet + 2.0;
        let mut markers: Vec<WorldMarker> = Vec::new();
        for _ in 0..cfg.markers_per_scene * 50 {
            if markers.len() == cfg.markers_per_scene || w - size - 2.0 * margin <= 0.0 || h - size - 2.0 * margin <= 0.0 {
                break;
            }
            let x = rng.gen_range(margin..w - size - margin).round();
            let y = rng.gen_range(margin..h - size - margin).round();
            let clear = markers.iter().all(|m| {
                (m.x - x).abs() >= size + 2.0 * quiet + 2.0 || (m.y - y).abs() >= size + 2.0 * quiet + 2.0
            });
            if clear {
                markers.push(WorldMarker { id: first_id + markers.len() as u32, x, y, size });
            }
        }
        let frame_files = (0..cfg.frames_per_scene).map(|t| format!("{t:04}.png")).collect();
        Self { scene: name, height: cfg.height, width: cfg.width, markers, camera, frame_files, base, waves, shapes }
    }

    fn world(&self, x: f64, y: f64) -> [f32; 3] {
        for m in &self.markers {
            if let Some(v) = m.sample(x, y) {
                return [v; 3];
            }
        }
        for s in self.shapes.iter().rev() {
            let (dx, dy) = ((x - s.cx) / s.rx, (y - s.cy) / s.ry);
            let inside = if s.disc { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
            if inside {
                return s.color;
            }
        }
        let mut c = self.base;
        for wv in &self.waves {
            let s = (wv.kx * x + wv.ky * y + wv.phase).sin() as f32;
            for (ch, a) in c.iter_mut().zip(wv.amp) {
                *ch += a * s;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }

    /// Frame `t`, antialiased with 3x3 supersampling.
    pub fn render(&self, t: usize) -> ImageTensor {
        let [ox, oy] = self.camera[t];
        const OFF: [f64; 3] = [-1.0 / 3.0, 0.0, 1.0 / 3.0];
        ImageTensor::from_fn(self.height, self.width, |i, j| {
            let mut acc = [0.0f32; 3];
            for dy in OFF {
                for dx in OFF {
                    let c = self.world(j as f64 + 0.5 + ox + dx, i as f64 + 0.5 + oy + dy);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            acc.map(|v| v / 9.0)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Render `cfg.scenes` sequences into `<out>/<scene>/<t>.png` with a layout
/// sidecar per scene.
pub fn render_procedural(cfg: &ProceduralConfig, out: &Path) -> Result<Vec<SceneLayout>> {
    let p = cfg.problems();
    if !p.is_empty() {
        return Err(Error::ConfigList(p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layouts: Vec<SceneLayout> = (0..cfg.scenes)
        .map(|s| SceneLayout::random(format!("scene{s:03}"), cfg, &mut rng, (s * cfg.markers_per_scene) as u32))
        .collect();
    for layout in &layouts {
        let dir = out.join(&layout.scene);
        (0..layout.camera.len())
            .into_par_iter()
            .try_for_each(|t| layout.render(t).save_png(&dir.join(&layout.frame_files[t])))?;
        let json = serde_json::to_string_pretty(layout)?;
        std::fs::write(dir.join(LAYOUT_FILE), json).map_err(|e| Error::io(format!("writing layout in {}", dir.display()), e))?;
    }
    if layouts.iter().all(|l| l.markers.is_empty()) && cfg.markers_per_scene > 0 {
        return Err(config("no marker fits in the requested frame size"));
    }
    Ok(layouts)
}
