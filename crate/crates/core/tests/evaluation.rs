use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use ghost_deblur::blursynth::{generate_dataset, render_procedural, Corpus, ProceduralConfig, Split, SynthConfig};
use ghost_deblur::checkpoint::Checkpoint;
use ghost_deblur::evaluation::*;
use ghost_deblur::{Error, Generator, GeneratorConfig, ImageTensor};

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    p
}

fn inputs(n: usize) -> Vec<DetectionInput> {
    (0..n)
        .map(|i| DetectionInput { image_id: format!("img{i}"), path: format!("/data/img{i}.png").into(), expected: Vec::new() })
        .collect()
}

/// Answers every request with one unit-square marker; crashes on `img2`.
const ECHO_DETECTOR: &str = r#"while IFS= read -r line; do
  path=$(printf '%s' "$line" | sed 's/.*"image_path":"\([^"]*\)".*/\1/')
  case "$path" in *img2.png) exit 3;; esac
  printf '{"image_path":"%s","markers":[{"id":7,"corners":[[0,0],[1,0],[1,1],[0,1]]}]}\n' "$path"
done"#;

#[test]
fn process_adapter_speaks_the_wire_contract() {
    let dir = tempfile::tempdir().unwrap();
    let exe = script(dir.path(), "det.sh", ECHO_DETECTOR);
    let mut a = ProcessAdapter::new(&exe, Vec::new(), DetectorKind::ArucoFamily, 4).unwrap();
    let out = a.detect(&inputs(5));
    assert_eq!(out.len(), 5);
    for (i, r) in out.iter().enumerate() {
        match (i, r) {
            (2, Err(e)) => assert!(e.contains("exited"), "{e}"),
            (_, Ok(rec)) => {
                assert_eq!(rec.image_id, format!("img{i}"));
                assert_eq!(rec.markers.len(), 1);
                assert_eq!(rec.detector, DetectorKind::ArucoFamily);
            }
            (_, other) => panic!("image {i}: {other:?}"),
        }
    }
}

#[test]
fn malformed_adapter_output_is_an_error_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let exe = script(dir.path(), "bad.sh", "while read -r line; do echo 'not json'; done");
    let mut a = ProcessAdapter::new(&exe, Vec::new(), DetectorKind::Apriltag3Family, 8).unwrap();
    let out = a.detect(&inputs(2));
    assert!(out.iter().all(|r| r.as_ref().is_err_and(|e| e.contains("malformed"))));
}

#[test]
fn invalid_quads_from_an_adapter_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"while IFS= read -r line; do
  path=$(printf '%s' "$line" | sed 's/.*"image_path":"\([^"]*\)".*/\1/')
  printf '{"image_path":"%s","markers":[{"id":1,"corners":[[0,0],[1,1],[1,0],[0,1]]}]}\n' "$path"
done"#;
    let exe = script(dir.path(), "bowtie.sh", body);
    let mut a = ProcessAdapter::new(&exe, Vec::new(), DetectorKind::Stub, 8).unwrap();
    assert!(a.detect(&inputs(1))[0].is_err());
}

#[test]
fn missing_adapter_names_the_contract() {
    let err = ProcessAdapter::new(Path::new("/nonexistent/detector"), Vec::new(), DetectorKind::Stub, 1).unwrap_err();
    assert!(matches!(err, Error::Adapter(_)));
    assert!(err.to_string().contains("image_path"), "{err}");
}

#[test]
fn failed_handshake_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let exe = script(dir.path(), "fail.sh", "exit 1");
    assert!(ProcessAdapter::new(&exe, Vec::new(), DetectorKind::Stub, 1).is_err());
}

fn small_corpus(dir: &Path) -> Corpus {
    let frames = dir.join("frames");
    let cfg = ProceduralConfig { scenes: 2, frames_per_scene: 25, height: 128, width: 128, ..Default::default() };
    render_procedural(&cfg, &frames).unwrap();
    generate_dataset(&frames, &dir.join("corpus"), &SynthConfig { test_fraction: 0.5, ..Default::default() }).unwrap();
    Corpus::open(&dir.join("corpus")).unwrap()
}

fn identity_model() -> (Generator, ghost_autograd::ParamStore<f32>) {
    let (gen, mut store) = Generator::build::<f32>(&GeneratorConfig::default(), 0).unwrap();
    gen.zero_head(&mut store);
    (gen, store)
}

#[test]
fn layout_decoder_reads_sharp_markers_and_not_flat_images() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let recs = corpus.pairs(Split::Train);
    let sharp: Vec<DetectionInput> = recs
        .iter()
        .map(|r| DetectionInput { image_id: r.sharp.clone(), path: corpus.root.join(&r.sharp), expected: r.markers.clone() })
        .collect();
    let expected: usize = sharp.iter().map(|i| i.expected.len()).sum();
    assert!(expected > 0);
    let found: usize = LayoutDecoderStub.detect(&sharp).into_iter().map(|r| r.unwrap().markers.len()).sum();
    assert_eq!(found, expected);

    let gray = dir.path().join("gray.png");
    ImageTensor::filled(128, 128, 0.5).save_png(&gray).unwrap();
    let flat = DetectionInput { image_id: "gray".into(), path: gray, expected: recs[0].markers.clone() };
    assert!(LayoutDecoderStub.detect(&[flat])[0].as_ref().unwrap().markers.is_empty());
}

#[test]
fn identity_model_keeps_detection_rate_and_report_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let (gen, store) = identity_model();
    let q = evaluate_split(&corpus, Split::Test, &gen, &store, &dir.path().join("eval")).unwrap();
    for row in &q.rows {
        assert_eq!(row.psnr_blurred, row.psnr_deblurred);
    }
    let sets = marker_detection_rate(&q.sets, "sharp", &mut LayoutDecoderStub).unwrap();
    assert_eq!(sets[0].rate, Some(1.0));
    assert_eq!(sets[1].detected, sets[2].detected);
    assert_eq!(sets[1].rate, sets[2].rate);

    let report = EvalReport {
        corpus_id: "small".into(),
        checkpoint: None,
        aggregates: QualityAggregates::of(&q.rows),
        images: q.rows.clone(),
        compute: None,
        latency: None,
        detection: Some(DetectionSection { detector: DetectorKind::Stub, reference_set: "sharp".into(), sets }),
    };
    report.check_consistency().unwrap();
    let back: EvalReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    back.check_consistency().unwrap();

    let mut tampered = report.clone();
    tampered.aggregates.psnr_blurred.mean += 1.0;
    assert!(tampered.check_consistency().is_err());

    let plots = dir.path().join("plots");
    std::fs::create_dir_all(&plots).unwrap();
    psnr_histogram(&report.images, &plots.join("psnr.svg")).unwrap();
    detection_rate_chart(&report.detection.as_ref().unwrap().sets, &plots.join("rates.svg")).unwrap();
    for f in ["psnr.svg", "rates.svg"] {
        assert!(std::fs::read_to_string(plots.join(f)).unwrap().starts_with("<svg"));
    }
}

#[test]
fn benchmark_counts_samples_and_scales_with_resolution() {
    let (gen, store) = identity_model();
    let small = vec![ImageTensor::filled(256, 256, 0.4)];
    let s = benchmark_inference(&gen, &store, &small, 3, 10).unwrap();
    assert_eq!(s.samples_ms.len(), 10);
    assert!(s.hardware_specific);
    assert_eq!(s.reference.ms, 37.0);
    assert!(s.p50_ms <= s.p95_ms);
    let large = vec![ImageTensor::filled(720, 1280, 0.4)];
    let l = benchmark_inference(&gen, &store, &large, 3, 10).unwrap();
    assert!(s.p50_ms < l.p50_ms, "{} vs {}", s.p50_ms, l.p50_ms);
    assert!(benchmark_inference(&gen, &store, &small, 2, 10).is_err());
    assert!(benchmark_inference(&gen, &store, &small, 3, 9).is_err());
}

#[test]
fn deblur_preserves_shape_for_video_frames() {
    let (gen, store) = identity_model();
    let img = ImageTensor::from_fn(720, 1280, |y, x| [(x % 97) as f32 / 96.0, (y % 89) as f32 / 88.0, 0.5]);
    let out = gen.deblur(&store, &img).unwrap();
    assert_eq!(out.dims(), img.dims());
    assert_eq!(out.data(), img.data());
}

#[test]
fn canonical_size_report() {
    let s = model_size(&GeneratorConfig::default()).unwrap();
    let (gen, store) = Generator::build::<f32>(&GeneratorConfig::default(), 0).unwrap();
    assert_eq!(s.bytes, Checkpoint::for_generator(&gen.cfg, &store).to_bytes().unwrap().len());
    assert_eq!(s.parameters, ghost_deblur::generator::count_parameters(&store));
}
