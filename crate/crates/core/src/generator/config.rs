use serde::{Deserialize, Serialize};

use crate::blocks::BackboneConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Tanh,
}

/// Every architecture hyperparameter of the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub backbone: BackboneConfig,
    pub fpn_channels: usize,
    /// Nearest-neighbour upsampling factor per pyramid level, listed from the
    /// deepest level to the shallowest.
    pub upscale_ratios: Vec<usize>,
    pub head_channels: usize,
    pub output_activation: OutputActivation,
    pub residual_skip: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            fpn_channels: 128,
            upscale_ratios: vec![4, 4, 2, 2, 2],
            head_channels: 64,
            output_activation: OutputActivation::Tanh,
            residual_skip: true,
        }
    }
}

impl GeneratorConfig {
    pub fn levels(&self) -> usize {
        self.backbone.tap_stages.len()
    }

    /// Upscale ratio of level `i` (0 = shallowest).
    pub fn ratio(&self, level: usize) -> usize {
        self.upscale_ratios[self.levels() - 1 - level]
    }

    /// Stride at which each level (shallow to deep) lands after upsampling.
    pub fn landing_strides(&self) -> Vec<usize> {
        self.backbone.tap_strides().iter().enumerate().map(|(i, s)| s / self.ratio(i).max(1)).collect()
    }

    /// Channels each level contributes to the decoder: the finest level
    /// skips the head and passes its half-width lateral through.
    pub fn level_output_channels(&self) -> Vec<usize> {
        (0..self.levels()).map(|i| if i == 0 { self.fpn_channels / 2 } else { self.head_channels }).collect()
    }

    pub fn fuse_channels(&self, stride: usize) -> usize {
        if stride >= 4 {
            self.head_channels
        } else {
            self.head_channels / 2
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = self.backbone.problems();
        if self.fpn_channels < 4 || self.fpn_channels % 4 != 0 {
            p.push(format!("fpn_channels must be a positive multiple of 4, got {}", self.fpn_channels));
        }
        if self.head_channels < 4 || self.head_channels % 4 != 0 {
            p.push(format!("head_channels must be a positive multiple of 4, got {}", self.head_channels));
        }
        let levels = self.levels();
        if levels < 2 {
            p.push(format!("at least 2 pyramid levels are required, got {levels}"));
        }
        if self.upscale_ratios.len() != levels {
            p.push(format!(
                "upscale_ratios has {} entries but the backbone provides {levels} taps",
                self.upscale_ratios.len()
            ));
            return p;
        }
        if let Some(r) = self.upscale_ratios.iter().find(|&&r| r == 0) {
            p.push(format!("upscale ratios must be positive, got {r}"));
            return p;
        }
        if !p.is_empty() {
            return p;
        }
        let strides = self.backbone.tap_strides();
        for (i, &s) in strides.iter().enumerate() {
            let r = self.ratio(i);
            if s % r != 0 {
                p.push(format!("level {i} (stride {s}) cannot be upscaled by {r} to an integral stride"));
            }
        }
        if p.is_empty() {
            let landing = self.landing_strides();
            if landing.windows(2).any(|w| w[0] > w[1]) {
                p.push(format!("landing strides {landing:?} must not increase from deep to shallow levels"));
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(p))
        }
    }

    /// Human-readable list of differing fields, empty when equal.
    pub fn diff(&self, other: &GeneratorConfig) -> Vec<String> {
        diff_serialized(self, other)
    }
}

/// Field-level differences between two serializable values, as
/// `path: left != right` lines.
pub(crate) fn diff_serialized<S: serde::Serialize>(a: &S, b: &S) -> Vec<String> {
    let a = serde_json::to_value(a).expect("config serializes");
    let b = serde_json::to_value(b).expect("config serializes");
    let mut out = Vec::new();
    json_diff("", &a, &b, &mut out);
    out
}

fn json_diff(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    match (a, b) {
        (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => json_diff(&p, u, v, out),
                    (u, v) => out.push(format!("{p}: {} != {}", show(u), show(v))),
                }
            }
        }
        _ if a != b => out.push(format!("{path}: {a} != {b}")),
        _ => {}
    }
}

fn show(v: Option<&serde_json::Value>) -> String {
    v.map_or("<absent>".into(), |v| v.to_string())
}
