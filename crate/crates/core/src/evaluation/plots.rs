use std::path::Path;

use plotters::prelude::*;

use super::detection::SetDetections;
use super::report::ImageQuality;
use crate::error::{contract, Error, Result};

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::io("rendering plot", std::io::Error::other(e.to_string()))
}

/// Bar chart of per-set detection rates, as an SVG file.
pub fn detection_rate_chart(sets: &[SetDetections], path: &Path) -> Result<()> {
    if sets.is_empty() {
        return Err(contract("no detection sets to plot"));
    }
    let rates: Vec<f64> = sets.iter().map(|s| s.rate.unwrap_or(0.0)).collect();
    let top = rates.iter().cloned().fold(1.0, f64::max) * 1.1;
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Marker detection rate", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d((0..sets.len()).into_segmented(), 0.0..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc("detected / reference")
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) => sets.get(*i).map_or(String::new(), |s| s.name.clone()),
            _ => String::new(),
        })
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(
            Histogram::vertical(&chart)
                .style(BLUE.mix(0.6).filled())
                .margin(20)
                .data(rates.iter().enumerate().map(|(i, &r)| (i, r))),
        )
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Overlaid PSNR histograms of blurred and deblurred images, as an SVG file.
pub fn psnr_histogram(rows: &[ImageQuality], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(contract("no images to plot"));
    }
    let all: Vec<f64> = rows.iter().flat_map(|r| [r.psnr_blurred, r.psnr_deblurred]).collect();
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min).floor();
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil().max(lo + 1.0);
    let bins = 20usize;
    let width = (hi - lo) / bins as f64;
    let count = |vals: Vec<f64>| {
        let mut c = vec![0u32; bins];
        for v in vals {
            c[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
        c
    };
    let blurred = count(rows.iter().map(|r| r.psnr_blurred).collect());
    let deblurred = count(rows.iter().map(|r| r.psnr_deblurred).collect());
    let ymax = *blurred.iter().chain(&deblurred).max().unwrap_or(&1) + 1;

    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("PSNR against sharp", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(40)
        .build_cartesian_2d(lo..hi, 0u32..ymax)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("PSNR (dB)").y_desc("images").draw().map_err(plot_err)?;
    for (counts, color, label) in [(&blurred, RED, "blurred"), (&deblurred, BLUE, "deblurred")] {
        chart
            .draw_series(counts.iter().enumerate().map(|(i, &c)| {
                let x0 = lo + i as f64 * width;
                Rectangle::new([(x0, 0), (x0 + width, c)], color.mix(0.4).filled())
            }))
            .map_err(plot_err)?
            .label(label)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.mix(0.4).filled()));
    }
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}
