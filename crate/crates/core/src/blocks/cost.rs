//! Analytic cost trace: every convolution reports its shape and
//! multiply-accumulate count without executing anything.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }

    pub fn scaled_up(self, r: usize) -> Self {
        Self { c: self.c, h: self.h * r, w: self.w * r }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Backbone,
    Fpn,
    Head,
    Discriminator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LayerKind {
    Conv { kernel: usize, stride: usize },
    Depthwise { kernel: usize, stride: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub section: Section,
    pub kind: LayerKind,
    pub input: Dims,
    pub output: Dims,
    pub macs: u64,
    pub params: u64,
}

/// A cheap module as a unit, for comparing against a dense equivalent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheapModuleCost {
    pub name: String,
    pub section: Section,
    pub input: Dims,
    pub output: Dims,
    pub macs: u64,
    /// MACs of a dense `k x k` convolution with the same widths (`k` is the
    /// cheap kernel size).
    pub dense_equivalent_macs: u64,
}

#[derive(Clone, Debug, Default)]
pub struct CostTrace {
    section: Option<Section>,
    pub layers: Vec<LayerCost>,
    pub cheap_modules: Vec<CheapModuleCost>,
}

impl CostTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_section(&mut self, s: Section) {
        self.section = Some(s);
    }

    pub fn section(&self) -> Section {
        self.section.unwrap_or(Section::Backbone)
    }

    pub fn push(&mut self, name: &str, kind: LayerKind, input: Dims, output: Dims, macs: u64, params: u64) {
        self.layers.push(LayerCost { name: name.to_string(), section: self.section(), kind, input, output, macs, params });
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn section_macs(&self, s: Section) -> u64 {
        self.layers.iter().filter(|l| l.section == s).map(|l| l.macs).sum()
    }
}
