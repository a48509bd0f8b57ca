use serde::{Deserialize, Serialize};

use crate::blocks::{CostTrace, Dims, LayerKind, Section};
use crate::checkpoint::serialized_size_bytes;
use crate::error::{contract, Result};
use crate::generator::{count_parameters, Generator, GeneratorConfig};

/// Counting convention written into every report.
pub const FLOP_CONVENTION: &str =
    "convolutions only; 1 MAC = 2 FLOPs; normalization, activation, upsampling and additions excluded";

/// Native frame size of the GoPro benchmark.
pub const GOPRO_SIZE: (usize, usize) = (720, 1280);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub name: String,
    pub section: Section,
    pub kind: LayerKind,
    pub input: Dims,
    pub output: Dims,
    pub macs: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionTotals {
    pub backbone: u64,
    pub fpn: u64,
    pub head: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub convention: String,
    /// Requested spatial size.
    pub requested: (usize, usize),
    /// Size actually traced (padded to the output stride).
    pub traced: (usize, usize),
    pub total_macs: u64,
    pub section_macs: SectionTotals,
    pub layers: Vec<LayerFlops>,
}

impl FlopReport {
    pub fn from_trace(trace: &CostTrace, requested: (usize, usize), traced: (usize, usize)) -> Self {
        let layers: Vec<LayerFlops> = trace
            .layers
            .iter()
            .map(|l| LayerFlops {
                name: l.name.clone(),
                section: l.section,
                kind: l.kind,
                input: l.input,
                output: l.output,
                macs: l.macs,
                flops: 2 * l.macs,
            })
            .collect();
        Self {
            convention: FLOP_CONVENTION.to_string(),
            requested,
            traced,
            total_macs: layers.iter().map(|l| l.macs).sum(),
            section_macs: SectionTotals {
                backbone: trace.section_macs(Section::Backbone),
                fpn: trace.section_macs(Section::Fpn),
                head: trace.section_macs(Section::Head),
            },
            layers,
        }
    }

    pub fn gmacs(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    pub fn gflops(&self) -> f64 {
        2.0 * self.gmacs()
    }

    pub fn backbone_gmacs(&self) -> f64 {
        self.section_macs.backbone as f64 / 1e9
    }

    /// Totals scaled by area to the requested (unpadded) size.
    pub fn area_scaled_gmacs(&self) -> f64 {
        let (rh, rw) = self.requested;
        let (th, tw) = self.traced;
        self.gmacs() * (rh * rw) as f64 / (th * tw) as f64
    }

    /// Plain-text breakdown table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<44} {:<9} {:>16} {:>16} {:>14}\n",
            "layer", "section", "input", "output", "MFLOPs"
        );
        for l in &self.layers {
            let dims = |d: Dims| format!("{}x{}x{}", d.c, d.h, d.w);
            s.push_str(&format!(
                "{:<44} {:<9} {:>16} {:>16} {:>14.3}\n",
                l.name,
                format!("{:?}", l.section).to_lowercase(),
                dims(l.input),
                dims(l.output),
                l.flops as f64 / 1e6
            ));
        }
        s.push_str(&format!(
            "backbone {:.3} GMAC, fpn {:.3} GMAC, head {:.3} GMAC, total {:.3} GMAC = {:.3} GFLOPs at {}x{} ({})\n",
            self.section_macs.backbone as f64 / 1e9,
            self.section_macs.fpn as f64 / 1e9,
            self.section_macs.head as f64 / 1e9,
            self.gmacs(),
            self.gflops(),
            self.traced.0,
            self.traced.1,
            self.convention
        ));
        s
    }
}

/// Analytic cost of `gen` on a `height x width` RGB input; sizes that are
/// not a multiple of the output stride are padded up first, as inference does.
pub fn count_flops(gen: &Generator, height: usize, width: usize) -> Result<FlopReport> {
    if height == 0 || width == 0 {
        return Err(contract(format!("cannot count FLOPs for a {height}x{width} input")));
    }
    let os = gen.cfg.backbone.output_stride();
    let traced = (height.div_ceil(os) * os, width.div_ceil(os) * os);
    let trace = gen.trace(Dims::new(3, traced.0, traced.1))?;
    Ok(FlopReport::from_trace(&trace, (height, width), traced))
}

/// Cheap top-down path against the same path with dense convolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LighteningReport {
    pub modules: usize,
    pub cheap_macs: u64,
    pub dense_macs: u64,
    /// `cheap_macs / dense_macs`.
    pub ratio: f64,
}

pub fn lightening_ratio(gen: &Generator, height: usize, width: usize) -> Result<LighteningReport> {
    let os = gen.cfg.backbone.output_stride();
    let trace = gen.trace(Dims::new(3, height.div_ceil(os) * os, width.div_ceil(os) * os))?;
    let path: Vec<_> = trace.cheap_modules.iter().filter(|m| m.section == Section::Fpn).collect();
    if path.is_empty() {
        return Err(contract("generator has no cheap modules in its top-down path"));
    }
    let cheap_macs: u64 = path.iter().map(|m| m.macs).sum();
    let dense_macs: u64 = path.iter().map(|m| m.dense_equivalent_macs).sum();
    Ok(LighteningReport { modules: path.len(), cheap_macs, dense_macs, ratio: cheap_macs as f64 / dense_macs as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub parameters: usize,
    pub bytes: usize,
    /// Decimal megabytes.
    pub megabytes: f64,
}

/// Parameter count and serialized checkpoint size at 32-bit precision.
pub fn model_size(cfg: &GeneratorConfig) -> Result<SizeReport> {
    let (_, store) = Generator::build::<f32>(cfg, 0)?;
    let bytes = serialized_size_bytes(cfg, &store)?;
    Ok(SizeReport { parameters: count_parameters(&store), bytes, megabytes: bytes as f64 / 1e6 })
}
