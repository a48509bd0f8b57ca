use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde_json::json;
use toml::Value;

use crate::error::{runtime, CliError};
use crate::manifest::RunManifest;
use crate::settings::{layered, to_toml, Flags, SynthSettings};
use crate::{
    ConfigArgs, ConfigKind, DeblurArgs, DetectorChoice, DetectorFamily, EvalArgs, FlopsArgs, InitArgs, SizeArgs,
    SynthArgs, TrainArgs,
};
use ghost_deblur::blursynth::{generate_dataset, list_frames, render_procedural, Corpus, Split, MANIFEST_FILE};
use ghost_deblur::checkpoint::{load_generator, Checkpoint};
use ghost_deblur::evaluation::{
    benchmark_inference, count_flops, detection_rate_chart, evaluate_split, lightening_ratio, marker_detection_rate,
    model_size, psnr_histogram, ComputeSection, DetectionSection, DetectorAdapter, DetectorKind, EvalReport,
    LayoutDecoderStub, ProcessAdapter, QualityAggregates, GOPRO_SIZE,
};
use ghost_deblur::training::{train as run_training, TrainConfig, TrainingData, METRICS_FILE};
use ghost_deblur::{Error, Generator, GeneratorConfig, ImageTensor};

fn create_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| runtime(format!("creating {}: {e}", p.display())))
}

fn require_file(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", p.display())))
    }
}

fn problems(list: Vec<String>) -> Result<(), CliError> {
    if list.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigList(list).into())
    }
}

fn generator_config(file: Option<&Path>) -> Result<GeneratorConfig, CliError> {
    let cfg: GeneratorConfig = layered(&GeneratorConfig::default(), file, Vec::new())?;
    cfg.validate()?;
    Ok(cfg)
}

fn open_corpus(root: &Path) -> Result<Corpus, CliError> {
    if !root.join(MANIFEST_FILE).is_file() {
        return Err(CliError::Usage(format!("no corpus at {} (missing {MANIFEST_FILE})", root.display())));
    }
    Corpus::open(root).map_err(|e| CliError::Usage(format!("corpus {}: {e}", root.display())))
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let window_range = a.window_range.map(|v| Value::Array(v.into_iter().map(|x| Value::Integer(x as i64)).collect()));
    let flags = Flags::default()
        .int("synth.seed", a.seed)
        .int("procedural.seed", a.seed)
        .int("synth.fixed_window", a.window)
        .value("synth.window_range", window_range)
        .int("synth.stride", a.stride)
        .float("synth.gamma", a.gamma)
        .float("synth.test_fraction", a.test_fraction)
        .int("procedural.scenes", a.scenes)
        .int("procedural.frames_per_scene", a.frames_per_scene)
        .int("procedural.height", a.size)
        .int("procedural.width", a.size);
    let s: SynthSettings = layered(&SynthSettings::default(), a.config.as_deref(), flags.0)?;
    let mut p = s.synth.problems();
    if a.procedural {
        p.extend(s.procedural.problems());
    }
    problems(p)?;
    if let Some(f) = &a.frames {
        if !f.is_dir() {
            return Err(CliError::Usage(format!("frames directory {} does not exist", f.display())));
        }
    }
    let manifest = RunManifest::start("synth", &s, Some(s.synth.seed))?;
    create_dir(&a.out)?;
    let frames = match a.frames {
        Some(f) => f,
        None => {
            let dir = a.out.join("frames");
            let layouts = render_procedural(&s.procedural, &dir)?;
            info!("rendered {} procedural scenes into {}", layouts.len(), dir.display());
            dir
        }
    };
    let m = generate_dataset(&frames, &a.out, &s.synth)?;
    let count = |split| m.pairs.iter().filter(|r| r.split == split).count();
    info!("{} pairs ({} train, {} test), {} windows skipped", m.pairs.len(), count(Split::Train), count(Split::Test), m.skipped.len());
    for sk in &m.skipped {
        warn!("skipped {} window at {} (n={}): {}", sk.scene, sk.start, sk.n, sk.reason);
    }
    let path = manifest.finish(&a.out, vec![a.out.join(MANIFEST_FILE)])?;
    println!("corpus written to {} ({} pairs); run manifest {}", a.out.display(), m.pairs.len(), path.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let base = TrainConfig::preset(&a.preset)?;
    let flags = Flags::default()
        .int("seed", a.seed)
        .int("epochs", a.epochs)
        .int("images_per_epoch", a.images_per_epoch)
        .int("batch_size", a.batch_size)
        .int("crop_size", a.crop_size)
        .float("lr_generator", a.lr_generator)
        .float("lr_discriminator", a.lr_discriminator)
        .int("checkpoint_every", a.checkpoint_every);
    let cfg: TrainConfig = layered(&base, a.config.as_deref(), flags.0)?;
    cfg.validate()?;
    for w in cfg.warnings() {
        warn!("{w}");
    }
    let corpus = open_corpus(&a.corpus)?;
    if let Some(r) = &a.resume {
        require_file(r, "resume checkpoint")?;
    }
    let data = TrainingData::from_corpus(&corpus)?;
    info!("training {} steps on {} pairs from {}", cfg.total_steps(), data.len(), a.corpus.display());
    let manifest = RunManifest::start("train", &cfg, Some(cfg.seed))?;
    let t0 = Instant::now();
    let every = a.log_every.max(1);
    let summary = run_training(&cfg, &data, &a.out, a.resume.as_deref(), |r| {
        if r.step == 1 || r.step % every == 0 {
            info!(
                "step {} g {:.5} (pixel {:.5} perceptual {:.4} adversarial {:.4}) d {:.4} lr_g {:.2e} [{:.0}s]",
                r.step,
                r.g_loss,
                r.pixel,
                r.perceptual,
                r.adversarial,
                r.d_loss,
                r.lr_generator,
                t0.elapsed().as_secs_f64()
            );
        }
    })?;
    let mut outputs = summary.checkpoints.clone();
    outputs.push(a.out.join(METRICS_FILE));
    manifest.finish(&a.out, outputs)?;
    println!(
        "trained {} steps in {:.1}s; final checkpoint {}",
        summary.records.len(),
        t0.elapsed().as_secs_f64(),
        summary.final_checkpoint.display()
    );
    Ok(())
}

pub fn deblur(a: DeblurArgs) -> Result<(), CliError> {
    if !a.input.exists() {
        return Err(CliError::Usage(format!("input {} does not exist", a.input.display())));
    }
    require_file(&a.checkpoint, "checkpoint")?;
    let expected = a.config.as_deref().map(|p| generator_config(Some(p))).transpose()?;
    let (gen, store) = load_generator(&a.checkpoint, expected.as_ref())?;
    let inputs = if a.input.is_dir() { list_frames(&a.input)? } else { vec![a.input.clone()] };
    if inputs.is_empty() {
        return Err(CliError::Usage(format!("no PNG files in {}", a.input.display())));
    }
    let manifest = RunManifest::start(
        "deblur",
        &json!({ "checkpoint": a.checkpoint, "input": a.input, "generator": gen.cfg }),
        None,
    )?;
    create_dir(&a.out)?;
    let mut outputs = Vec::with_capacity(inputs.len());
    for p in &inputs {
        let img = ImageTensor::load_png(p)?;
        let t = Instant::now();
        let out = gen.deblur(&store, &img)?;
        let dest = a.out.join(p.file_name().expect("listed files have names"));
        out.save_png(&dest)?;
        info!("{} -> {} ({}x{}, {:.0} ms)", p.display(), dest.display(), img.height(), img.width(), t.elapsed().as_secs_f64() * 1e3);
        outputs.push(dest);
    }
    manifest.finish(&a.out, outputs)?;
    println!("deblurred {} image(s) into {}", inputs.len(), a.out.display());
    Ok(())
}

fn build_adapter(a: &EvalArgs) -> Result<Option<Box<dyn DetectorAdapter>>, CliError> {
    if a.no_detector {
        return Ok(None);
    }
    match a.detector {
        DetectorChoice::Stub => Ok(Some(Box::new(LayoutDecoderStub))),
        DetectorChoice::Process => {
            let Some(cmd) = &a.detector_cmd else {
                return Err(CliError::Usage("--detector process needs --detector-cmd".into()));
            };
            let kind = match a.detector_family {
                DetectorFamily::Apriltag3Family => DetectorKind::Apriltag3Family,
                DetectorFamily::ArucoFamily => DetectorKind::ArucoFamily,
                DetectorFamily::Stub => DetectorKind::Stub,
            };
            let adapter = ProcessAdapter::new(cmd, a.detector_args.clone(), kind, a.detector_batch)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(Some(Box::new(adapter)))
        }
    }
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let split = match a.split.as_str() {
        "test" => Split::Test,
        "train" => Split::Train,
        other => return Err(CliError::Usage(format!("unknown split `{other}` (expected train or test)"))),
    };
    let corpus = open_corpus(&a.corpus)?;
    require_file(&a.checkpoint, "checkpoint")?;
    let mut adapter = build_adapter(&a)?;
    let (gen, store) = load_generator(&a.checkpoint, None)?;
    let settings = json!({
        "corpus": a.corpus,
        "checkpoint": a.checkpoint,
        "split": a.split,
        "detector": if a.no_detector { None } else { Some(adapter.as_ref().map(|d| d.kind())) },
        "detector_cmd": a.detector_cmd,
        "benchmark": a.benchmark.then(|| json!({ "warmup": a.warmup, "repeats": a.repeats })),
        "generator": gen.cfg,
    });
    let manifest = RunManifest::start("eval", &settings, None)?;
    create_dir(&a.out)?;

    let q = evaluate_split(&corpus, split, &gen, &store, &a.out)?;
    let flops = count_flops(&gen, GOPRO_SIZE.0, GOPRO_SIZE.1)?;
    let size = model_size(&gen.cfg)?;
    let compute = ComputeSection {
        gflops: flops.gflops(),
        gmacs: flops.gmacs(),
        backbone_gmacs: flops.backbone_gmacs(),
        lightening: lightening_ratio(&gen, GOPRO_SIZE.0, GOPRO_SIZE.1)?,
        model_mb: size.megabytes,
        size,
        flops,
    };
    let detection = match adapter.as_mut() {
        Some(ad) => Some(DetectionSection {
            detector: ad.kind(),
            reference_set: "sharp".into(),
            sets: marker_detection_rate(&q.sets, "sharp", ad.as_mut())?,
        }),
        None => None,
    };
    let latency = if a.benchmark {
        let imgs = q.sets[1].images.iter().map(|i| ImageTensor::load_png(&i.path)).collect::<Result<Vec<_>, _>>()?;
        Some(benchmark_inference(&gen, &store, &imgs, a.warmup, a.repeats)?)
    } else {
        None
    };
    let report = EvalReport {
        corpus_id: corpus.root.file_name().map_or_else(|| corpus.root.display().to_string(), |n| n.to_string_lossy().to_string()),
        checkpoint: Some(a.checkpoint.clone()),
        aggregates: QualityAggregates::of(&q.rows),
        images: q.rows,
        compute: Some(compute),
        latency,
        detection,
    };
    report.check_consistency()?;
    let report_path = a.out.join("report.json");
    report.save(&report_path)?;
    let plots = a.out.join("plots");
    create_dir(&plots)?;
    let mut outputs = vec![report_path.clone(), a.out.join("deblurred")];
    psnr_histogram(&report.images, &plots.join("psnr_histogram.svg"))?;
    outputs.push(plots.join("psnr_histogram.svg"));
    if let Some(d) = &report.detection {
        detection_rate_chart(&d.sets, &plots.join("detection_rate.svg"))?;
        outputs.push(plots.join("detection_rate.svg"));
    }
    manifest.finish(&a.out, outputs)?;

    let ag = &report.aggregates;
    println!("images: {}", report.images.len());
    println!("PSNR blurred {:.3} dB, deblurred {:.3} dB", ag.psnr_blurred.mean, ag.psnr_deblurred.mean);
    println!("SSIM blurred {:.4}, deblurred {:.4}", ag.ssim_blurred.mean, ag.ssim_deblurred.mean);
    if let Some(d) = &report.detection {
        for s in &d.sets {
            let rate = s.rate.map_or("n/a".to_string(), |r| format!("{:.2}%", 100.0 * r));
            println!("markers {:<10} {:>5} detected, rate {rate}, {} detector errors", s.name, s.detected, s.errors);
        }
    }
    if let Some(l) = &report.latency {
        println!(
            "latency {}x{}: mean {:.1} ms, p50 {:.1} ms, p95 {:.1} ms on {} (hardware-specific)",
            l.height, l.width, l.mean_ms, l.p50_ms, l.p95_ms, l.device.cpu
        );
    }
    println!("report {}", report_path.display());
    Ok(())
}

pub fn flops(a: FlopsArgs) -> Result<(), CliError> {
    let cfg = generator_config(a.config.as_deref())?;
    let (gen, _) = Generator::build::<f32>(&cfg, 0)?;
    let r = count_flops(&gen, a.height, a.width)?;
    let light = lightening_ratio(&gen, a.height, a.width)?;
    if a.table {
        print!("{}", r.table());
    }
    println!("convention: {}", r.convention);
    println!(
        "traced {}x{}: backbone {:.3} GMAC, fpn {:.3} GMAC, head {:.3} GMAC, total {:.3} GMAC ({:.3} GFLOPs)",
        r.traced.0,
        r.traced.1,
        r.section_macs.backbone as f64 / 1e9,
        r.section_macs.fpn as f64 / 1e9,
        r.section_macs.head as f64 / 1e9,
        r.gmacs(),
        r.gflops()
    );
    if r.traced != r.requested {
        println!("area-scaled to {}x{}: total {:.3} GMAC", r.requested.0, r.requested.1, r.area_scaled_gmacs());
    }
    println!(
        "top-down path: {} cheap modules, {:.3} GMAC vs {:.3} GMAC dense ({:.2}%)",
        light.modules,
        light.cheap_macs as f64 / 1e9,
        light.dense_macs as f64 / 1e9,
        100.0 * light.ratio
    );
    if let Some(out) = &a.out {
        let manifest = RunManifest::start("flops", &json!({ "height": a.height, "width": a.width, "generator": cfg }), None)?;
        create_dir(out)?;
        let path = out.join("flops.json");
        let body = serde_json::to_string_pretty(&json!({ "flops": r, "lightening": light })).map_err(runtime)?;
        std::fs::write(&path, body).map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
        manifest.finish(out, vec![path])?;
    }
    Ok(())
}

pub fn size(a: SizeArgs) -> Result<(), CliError> {
    let cfg = generator_config(a.config.as_deref())?;
    let s = model_size(&cfg)?;
    println!("parameters {}, checkpoint {} bytes ({:.3} MB at 32-bit)", s.parameters, s.bytes, s.megabytes);
    if let Some(out) = &a.out {
        let manifest = RunManifest::start("size", &json!({ "generator": cfg }), None)?;
        create_dir(out)?;
        let path = out.join("size.json");
        std::fs::write(&path, serde_json::to_string_pretty(&s).map_err(runtime)?)
            .map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
        manifest.finish(out, vec![path])?;
    }
    Ok(())
}

pub fn init(a: InitArgs) -> Result<(), CliError> {
    let cfg = generator_config(a.config.as_deref())?;
    let manifest = RunManifest::start("init", &json!({ "generator": cfg, "zero_head": a.zero_head }), Some(a.seed))?;
    let (gen, mut store) = Generator::build::<f32>(&cfg, a.seed)?;
    if a.zero_head {
        gen.zero_head(&mut store);
    }
    create_dir(&a.out)?;
    let path: PathBuf = a.out.join("generator.bin");
    Checkpoint::for_generator(&cfg, &store).save(&path)?;
    manifest.finish(&a.out, vec![path.clone()])?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn config(a: ConfigArgs) -> Result<(), CliError> {
    let text = match a.kind {
        ConfigKind::Train => to_toml(&TrainConfig::preset(&a.preset)?)?,
        ConfigKind::Synth => to_toml(&SynthSettings::default())?,
        ConfigKind::Generator => to_toml(&GeneratorConfig::default())?,
    };
    print!("{text}");
    Ok(())
}
