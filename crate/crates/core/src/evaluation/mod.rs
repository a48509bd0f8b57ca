//! Quality metrics, compute cost, latency and marker-detection evaluation.

mod benchmark;
mod cost;
mod detection;
mod metrics;
mod plots;
mod report;

pub use benchmark::{
    benchmark_inference, percentile, published_reference_latency, DeviceDescriptor, LatencyStats, ReferenceLatency,
    MIN_REPEATS, MIN_WARMUP,
};
pub use cost::{
    count_flops, lightening_ratio, model_size, FlopReport, LayerFlops, LighteningReport, SectionTotals, SizeReport,
    FLOP_CONVENTION, GOPRO_SIZE,
};
pub use detection::{
    decode_marker, detection_rate, is_simple_quad, marker_detection_rate, DetectionInput, DetectionRecord,
    DetectorAdapter, DetectorKind, FixedStub, ImageDetections, ImageSet, LayoutDecoderStub, MarkerDetection,
    ProcessAdapter, SetDetections, MIN_MARKER_CONTRAST, WIRE_CONTRACT,
};
pub use metrics::{mse, psnr, ssim, Psnr, PSNR_CAP_DB, SSIM_SIGMA, SSIM_WINDOW};
pub use plots::{detection_rate_chart, psnr_histogram};
pub use report::{
    evaluate_split, Aggregate, ComputeSection, DetectionSection, EvalReport, ImageQuality, QualityAggregates,
    QualityRun,
};
