//! Acceptance run: one line per criterion, non-zero exit if any criterion
//! fails outside the recorded deviations.

mod common;

use std::collections::HashMap;
use std::time::Instant;

use common::{fm, input_grad_error, param_grad_error, rand_array, GRAD_TOL};
use ghost_autograd::{Array, Ctx, ParamBuilder, ParamStore, Tensor};
use ghost_deblur::adversarial::{ragan_ls, total_generator_loss, LossWeights, PerceptualExtractor, PerceptualSource};
use ghost_deblur::blocks::{CheapModule, CheapModuleConfig, GhostBottleneck, HalfInstanceNorm, StageSpec};
use ghost_deblur::blursynth::{
    crf_apply, crf_invert, generate_dataset, render_procedural, synthesize_blur, BlurJobSpec, Corpus, ProceduralConfig,
    Split, SynthConfig,
};
use ghost_deblur::checkpoint::load_generator;
use ghost_deblur::evaluation::*;
use ghost_deblur::training::{train, TrainConfig, TrainState, TrainingData};
use ghost_deblur::{Generator, GeneratorConfig, ImageTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BACKBONE_BAND: (f64, f64) = (1.65, 2.23);
const TOTAL_BAND: (f64, f64) = (17.4, 23.6);
const LIGHTENING_MAX: f64 = 0.5;
const SIZE_BAND_MB: (f64, f64) = (4.8, 8.0);
const BLUR_TOL: f64 = 1e-6;
const SCALAR_TARGET: f64 = 0.3033;
const SCALAR_TOL: f64 = 1e-4;
const METRIC_TOL: f64 = 1e-6;
const LOSS_RATIO_MAX: f64 = 0.8;
const SMOKE_STEPS: usize = 200;
const REPLAY_STEPS: usize = 10;

/// Checks that fail for a documented reason and do not gate the run.
const KNOWN_DEVIATIONS: &[(u8, &str)] = &[(4, "scalar oracle literal")];

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: impl Into<String>) -> Check {
    Check { name, pass, detail: detail.into() }
}

fn in_band(v: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&v)
}

fn criterion_1() -> Vec<Check> {
    let (gen, _) = Generator::build::<f32>(&GeneratorConfig::default(), 0).unwrap();
    let (h, w) = GOPRO_SIZE;
    let r = count_flops(&gen, h, w).unwrap();
    let scale = (h * w) as f64 / (r.traced.0 * r.traced.1) as f64;
    let (bb, total) = (r.backbone_gmacs(), r.gmacs());
    vec![
        check("backbone", in_band(bb, BACKBONE_BAND) && in_band(bb * scale, BACKBONE_BAND), format!(
            "backbone {bb:.3} GMAC at {}x{}, {:.3} area-scaled to {h}x{w}, band {BACKBONE_BAND:?}",
            r.traced.0, r.traced.1, bb * scale
        )),
        check("total", in_band(total, TOTAL_BAND) && in_band(r.area_scaled_gmacs(), TOTAL_BAND), format!(
            "total {total:.3} GMAC, {:.3} area-scaled, band {TOTAL_BAND:?}",
            r.area_scaled_gmacs()
        )),
    ]
}

fn criterion_2() -> Vec<Check> {
    let (gen, _) = Generator::build::<f32>(&GeneratorConfig::default(), 0).unwrap();
    let l = lightening_ratio(&gen, GOPRO_SIZE.0, GOPRO_SIZE.1).unwrap();
    vec![check("ratio", l.ratio <= LIGHTENING_MAX, format!(
        "{} cheap modules: {:.3} vs {:.3} GMAC dense, ratio {:.4} <= {LIGHTENING_MAX}",
        l.modules, l.cheap_macs as f64 / 1e9, l.dense_macs as f64 / 1e9, l.ratio
    ))]
}

fn criterion_3() -> Vec<Check> {
    let s = model_size(&GeneratorConfig::default()).unwrap();
    vec![check("size", in_band(s.megabytes, SIZE_BAND_MB), format!(
        "{} parameters, {:.3} MB, band {SIZE_BAND_MB:?}",
        s.parameters, s.megabytes
    ))]
}

fn max_abs_diff(a: &ImageTensor, b: &ImageTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max)
}

fn random_frame(seed: u64, h: usize, w: usize) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

fn criterion_4() -> Vec<Check> {
    let ids = |n: usize| (0..n).map(|i| format!("{i}")).collect::<Vec<_>>();
    let blur = |frames: &[ImageTensor]| {
        synthesize_blur(&BlurJobSpec::new(ids(frames.len()), 2.2).unwrap(), frames).unwrap().blurred
    };

    let f = random_frame(1, 16, 16);
    let stat = max_abs_diff(&blur(&vec![f.clone(); 7]), &f);

    let scalar = blur(&[ImageTensor::filled(2, 2, 0.5), ImageTensor::filled(2, 2, 0.0), ImageTensor::filled(2, 2, 0.0)])
        .data()[0] as f64;
    let closed_form = (0.5f64.powf(2.2) / 3.0).powf(1.0 / 2.2);

    let mut crf = 0.0f64;
    for gamma in [1.0, 1.8, 2.2, 2.8] {
        let img = random_frame(2, 32, 32);
        crf = crf.max(max_abs_diff(&img, &crf_apply(&crf_invert(&img, gamma).unwrap(), gamma).unwrap()));
    }

    let frames: Vec<ImageTensor> = (0..9).map(|i| random_frame(10 + i, 12, 12)).collect();
    let lin = |img: &ImageTensor| img.data().iter().map(|&v| (v as f64).powf(2.2)).sum::<f64>() / img.data().len() as f64;
    let expected = frames.iter().map(lin).sum::<f64>() / frames.len() as f64;
    let energy = (lin(&blur(&frames)) - expected).abs();

    vec![
        check("static window", stat <= BLUR_TOL, format!("static {stat:.1e}")),
        check("scalar closed form", (scalar - closed_form).abs() <= BLUR_TOL, format!("scalar {scalar:.6} vs closed form {closed_form:.6}")),
        check("scalar oracle literal", (scalar - SCALAR_TARGET).abs() <= SCALAR_TOL, format!("vs {SCALAR_TARGET} +-{SCALAR_TOL:.0e}")),
        check("crf round trip", crf <= BLUR_TOL, format!("crf {crf:.1e}")),
        check("energy", energy <= BLUR_TOL, format!("energy {energy:.1e}")),
    ]
}

fn criterion_5() -> Vec<Check> {
    let mut out = Vec::new();

    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let hin = HalfInstanceNorm::new(&mut ParamBuilder::new(&mut store, &mut rng), 8, true).unwrap();
    let x = Tensor::constant(rand_array(&[1, 8, 8, 8], 1));
    let y = hin.forward(&Ctx::inference(&store), &fm(&x)).unwrap();
    let exact = x.value().data()[4 * 64..] == y.tensor().value().data()[4 * 64..];
    out.push(check("hin passthrough", exact, format!("passthrough exact {exact}")));

    let mut store = ParamStore::<f64>::new();
    let m = CheapModule::new(&mut ParamBuilder::new(&mut store, &mut rng), CheapModuleConfig::new(4, 8)).unwrap();
    let ctx = Ctx::inference(&store);
    let x = Tensor::constant(rand_array(&[1, 4, 8, 8], 2));
    let y = m.forward(&ctx, &fm(&x)).unwrap();
    let intrinsic = m.intrinsic.forward(&ctx, &x);
    let cheap = m.cheap.forward(&ctx, &intrinsic);
    let yv = y.tensor().value().data();
    let halves = yv[..256] == *intrinsic.value().data() && yv[256..] == *cheap.value().data();
    out.push(check("cheap halves", halves, format!("half/half {halves}")));

    store.set(m.intrinsic.weight, Array::from_fn(vec![4, 4, 1, 1], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 }));
    store.set(m.cheap.weight, Array::from_fn(vec![4, 1, 3, 3], |i| if i % 9 == 4 { 1.0 } else { 0.0 }));
    for b in [m.intrinsic.bias, m.cheap.bias].into_iter().flatten() {
        store.set(b, Array::zeros(vec![4]));
    }
    let y = m.forward(&Ctx::inference(&store), &fm(&x)).unwrap();
    let yv = y.tensor().value().data();
    let ident = yv[..256] == *x.value().data() && yv[256..] == *x.value().data();
    out.push(check("cheap identity", ident, format!("identity kernels {ident}")));

    let mut worst = 0.0f64;
    {
        let mut store = ParamStore::<f64>::new();
        let m = CheapModule::new(&mut ParamBuilder::new(&mut store, &mut rng), CheapModuleConfig::new(3, 6)).unwrap();
        let x = rand_array(&[2, 3, 8, 8], 3);
        let f = |ctx: &Ctx<f64>, x: &Tensor<f64>| m.forward(ctx, &fm(x)).unwrap().tensor().clone();
        worst = worst.max(input_grad_error(&store, &x, f)).max(param_grad_error(&mut store, &x, f));
    }
    {
        let mut store = ParamStore::<f64>::new();
        let hin = HalfInstanceNorm::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, true).unwrap();
        for id in store.trainable_ids() {
            let shape = store.get(id).shape().to_vec();
            store.set(id, rand_array(&shape, 4));
        }
        let x = rand_array(&[2, 4, 8, 8], 5);
        let f = |ctx: &Ctx<f64>, x: &Tensor<f64>| hin.forward(ctx, &fm(x)).unwrap().tensor().clone();
        worst = worst.max(input_grad_error(&store, &x, f)).max(param_grad_error(&mut store, &x, f));
    }
    {
        let mut store = ParamStore::<f64>::new();
        let spec = StageSpec { kernel: 3, hidden: 12, out: 8, se_ratio: 0.25, stride: 2 };
        let b = GhostBottleneck::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, &spec, 1.0);
        let x = rand_array(&[2, 4, 8, 8], 6);
        let f = |ctx: &Ctx<f64>, x: &Tensor<f64>| b.forward(ctx, x);
        worst = worst.max(input_grad_error(&store, &x, f)).max(param_grad_error(&mut store, &x, f));
    }
    out.push(check("gradients", worst <= GRAD_TOL, format!("max gradient rel. error {worst:.1e} <= {GRAD_TOL:.0e}")));
    out
}

fn scalars(v: &[f64]) -> Tensor<f64> {
    Tensor::constant(Array::from_vec(vec![v.len()], v.to_vec()))
}

fn criterion_6() -> Vec<Check> {
    let r = ragan_ls(&scalars(&[1.0; 4]), &scalars(&[-1.0; 4])).unwrap();
    let (d, g) = (r.d_loss.item(), r.g_loss.item());

    // 25 elements, one unit difference: MSE 1/25.
    let pred = Tensor::constant(Array::from_fn(vec![1, 1, 5, 5], |i| if i == 12 { 1.0 } else { 0.0 }));
    let target = Tensor::constant(Array::<f64>::zeros(vec![1, 1, 5, 5]));
    let pixel = ghost_autograd::ops::mse(&pred, &target);
    let (total, _) = total_generator_loss(&pixel, &scalars(&[2.0]), &r.g_loss, &LossWeights::default()).unwrap();

    let ex = PerceptualExtractor::<f64>::from_source(&PerceptualSource::FixedRandom { seed: 0, width_divisor: 8 }).unwrap();
    let img = Tensor::constant(Array::from_fn(vec![1, 3, 32, 32], |i| ((i * 7919) % 101) as f64 / 100.0));
    let id_pixel = ghost_autograd::ops::mse(&img, &img).item();
    let id_perc = ex.loss(&img, &img).unwrap().item();
    let same = scalars(&[0.3, -0.2, 0.7]);
    let fixed = ragan_ls(&same, &same).unwrap().g_loss;
    let (id_total, _) = total_generator_loss(
        &ghost_autograd::ops::mse(&img, &img),
        &ex.loss(&img, &img).unwrap(),
        &fixed,
        &LossWeights::default(),
    )
    .unwrap();
    let w = LossWeights::default().w_adversarial;

    vec![
        check("ragan", d == 2.0 && g == 18.0, format!("d {d} g {g}")),
        check("weighted total", pixel.item() == 0.04 && total.item() == 0.212, format!("total {}", total.item())),
        check(
            "identity",
            id_pixel == 0.0 && id_perc == 0.0 && id_total.item() == w * fixed.item(),
            format!("identity pixel {id_pixel} perceptual {id_perc} total {}", id_total.item()),
        ),
    ]
}

fn criterion_8() -> Vec<Check> {
    let a = ImageTensor::from_fn(16, 16, |y, x| [((x + 2 * y) % 5) as f32 / 128.0; 3]);
    let p20 = psnr(&a, &a.map_values(|v| v + 0.1)).unwrap().db;
    let checker = |inv: bool| ImageTensor::from_fn(8, 8, move |y, x| [if ((x + y) % 2 == 0) != inv { 1.0 } else { 0.0 }; 3]);
    let p0 = psnr(&checker(false), &checker(true)).unwrap().db;
    let n = random_frame(3, 32, 32);
    let s1 = ssim(&n, &n).unwrap();
    let pat = ImageTensor::from_fn(32, 32, |y, x| [if (x / 4 + y / 3) % 2 == 0 { 1.0 } else { 0.0 }; 3]);
    let sneg = ssim(&pat, &pat.map_values(|v| 1.0 - v)).unwrap();
    vec![
        check("psnr 20", (p20 - 20.0).abs() <= METRIC_TOL, format!("PSNR {p20:.7} dB")),
        check("psnr 0", p0.abs() <= METRIC_TOL, format!("{p0:.1e} dB")),
        check("ssim identity", s1 == 1.0, format!("SSIM(a,a) {s1}")),
        check("ssim negative", sneg < 0.0, format!("inverted {sneg:.4}")),
    ]
}

fn criterion_9() -> Vec<Check> {
    let pct = |d, r| (detection_rate(d, r).unwrap() * 10_000.0).round() / 100.0;
    let (a, b) = (pct(3123, 9761), pct(5769, 9761));

    let counts: [(&str, [usize; 5]); 3] =
        [("sharp", [3, 2, 4, 1, 2]), ("blurred", [1, 0, 2, 1, 2]), ("deblurred", [2, 2, 3, 1, 1])];
    let mut stub = ByPath(HashMap::new());
    let mut sets = Vec::new();
    for (name, cs) in counts {
        let mut images = Vec::new();
        for (i, &c) in cs.iter().enumerate() {
            stub.0.insert(format!("{name}/{i}.png"), c);
            images.push(DetectionInput { image_id: format!("{i}"), path: format!("{name}/{i}.png").into(), expected: Vec::new() });
        }
        sets.push(ImageSet { name: name.into(), images });
    }
    let out = marker_detection_rate(&sets, "sharp", &mut stub).unwrap();
    let rates: HashMap<&str, Option<f64>> = out.iter().map(|s| (s.name.as_str(), s.rate)).collect();
    let ok = rates["sharp"] == Some(1.0) && rates["blurred"] == Some(6.0 / 12.0) && rates["deblurred"] == Some(9.0 / 12.0);
    vec![
        check("table rates", a == 31.99 && b == 59.10, format!("{a}% and {b}%")),
        check("stub rates", ok, format!(
            "stub rates {:?}/{:?}/{:?} vs 12/12, 6/12, 9/12",
            rates["sharp"], rates["blurred"], rates["deblurred"]
        )),
    ]
}

/// Stub answering with a fixed marker count per image path.
struct ByPath(HashMap<String, usize>);

impl DetectorAdapter for ByPath {
    fn kind(&self) -> DetectorKind {
        DetectorKind::Stub
    }

    fn detect(&mut self, inputs: &[DetectionInput]) -> Vec<Result<DetectionRecord, String>> {
        inputs
            .iter()
            .map(|i| {
                let n = self.0.get(&*i.path.to_string_lossy()).copied().unwrap_or(0);
                Ok(DetectionRecord {
                    image_id: i.image_id.clone(),
                    detector: DetectorKind::Stub,
                    markers: (0..n)
                        .map(|k| {
                            let x = 10.0 * k as f64;
                            MarkerDetection { id: 0, corners: [[x, 0.0], [x + 4.0, 0.0], [x + 4.0, 4.0], [x, 4.0]] }
                        })
                        .collect(),
                })
            })
            .collect()
    }
}

/// Criteria 7 and 10 share one smoke training run.
fn criteria_7_and_10() -> (Vec<Check>, Vec<Check>) {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    render_procedural(&ProceduralConfig::default(), &frames).unwrap();
    generate_dataset(&frames, &dir.path().join("corpus"), &SynthConfig { test_fraction: 0.33, ..Default::default() })
        .unwrap();
    let corpus = Corpus::open(&dir.path().join("corpus")).unwrap();
    let data = TrainingData::from_corpus(&corpus).unwrap();
    let cfg = TrainConfig::preset("smoke").unwrap();

    let t0 = Instant::now();
    let summary = train(&cfg, &data, &dir.path().join("run"), None, |_| {}).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let g: Vec<f64> = summary.records.iter().map(|r| r.g_loss).collect();
    let first = g[..10].iter().sum::<f64>() / 10.0;
    let last = g[g.len() - 10..].iter().sum::<f64>() / 10.0;
    let finite = summary.records.iter().all(|r| r.losses().iter().all(|v| v.is_finite()));

    let mut state = TrainState::new(&cfg).unwrap();
    let mut replay_same = true;
    for (step, rec) in summary.records.iter().take(REPLAY_STEPS).enumerate() {
        let again = state.training_step(&data.batch(&cfg, step as u64).unwrap()).unwrap();
        replay_same &= again.losses()[..6] == rec.losses()[..6];
    }

    let c7 = vec![
        check("pairs", data.len() == 16 && summary.records.len() == SMOKE_STEPS, format!(
            "{} pairs, {} steps in {secs:.0}s",
            data.len(), summary.records.len()
        )),
        check("loss ratio", last / first <= LOSS_RATIO_MAX, format!(
            "10-step mean g loss {first:.5} -> {last:.5} (ratio {:.3} <= {LOSS_RATIO_MAX})",
            last / first
        )),
        check("finite", finite, format!("finite {finite}")),
        check("replay", replay_same, format!("replay of {REPLAY_STEPS} steps bit-identical {replay_same}")),
    ];

    let (gen, store) = load_generator(&summary.final_checkpoint, None).unwrap();
    let q = evaluate_split(&corpus, Split::Test, &gen, &store, &dir.path().join("eval")).unwrap();
    let agg = QualityAggregates::of(&q.rows);
    let sets = marker_detection_rate(&q.sets, "sharp", &mut LayoutDecoderStub).unwrap();
    let by: HashMap<&str, &SetDetections> = sets.iter().map(|s| (s.name.as_str(), s)).collect();
    let (rb, rd) = (by["blurred"].rate.unwrap_or(0.0), by["deblurred"].rate.unwrap_or(0.0));
    let c10 = vec![
        check("held-out", q.rows.len() == 8, format!("{} held-out pairs", q.rows.len())),
        check("psnr", agg.psnr_deblurred.mean > agg.psnr_blurred.mean, format!(
            "mean PSNR blurred {:.3} -> deblurred {:.3} dB",
            agg.psnr_blurred.mean, agg.psnr_deblurred.mean
        )),
        check("detection", rd >= rb, format!(
            "stub detections sharp {} blurred {} ({rb:.3}) deblurred {} ({rd:.3})",
            by["sharp"].detected, by["blurred"].detected, by["deblurred"].detected
        )),
    ];
    (c7, c10)
}

fn main() {
    let t0 = Instant::now();
    let (c7, c10) = criteria_7_and_10();
    let criteria: Vec<(u8, &str, Vec<Check>)> = vec![
        (1, "FLOP reproduction", criterion_1()),
        (2, "lightening ratio", criterion_2()),
        (3, "model size", criterion_3()),
        (4, "blur synthesis", criterion_4()),
        (5, "block invariants", criterion_5()),
        (6, "loss oracle", criterion_6()),
        (7, "smoke training", c7),
        (8, "metric oracles", criterion_8()),
        (9, "detection-rate protocol", criterion_9()),
        (10, "desk-scale substitute", c10),
    ];

    let mut gating_failures = 0;
    for (id, title, checks) in &criteria {
        let failed: Vec<&Check> = checks.iter().filter(|c| !c.pass).collect();
        let known = |c: &Check| KNOWN_DEVIATIONS.contains(&(*id, c.name));
        let gating: Vec<_> = failed.iter().filter(|c| !known(c)).collect();
        gating_failures += gating.len();
        let status = match (failed.is_empty(), gating.is_empty()) {
            (true, _) => "PASS".to_string(),
            (false, true) => format!(
                "FAIL (known deviation: {}; see decision ledger)",
                failed.iter().map(|c| c.name).collect::<Vec<_>>().join(", ")
            ),
            (false, false) => format!("FAIL ({})", gating.iter().map(|c| c.name).collect::<Vec<_>>().join(", ")),
        };
        let details: Vec<&str> = checks.iter().map(|c| c.detail.as_str()).collect();
        println!("criterion {id:>2} {title:<24} {status}: {}", details.join("; "));
    }
    println!("acceptance finished in {:.0}s", t0.elapsed().as_secs_f64());
    if gating_failures > 0 {
        eprintln!("{gating_failures} gating check(s) failed");
        std::process::exit(1);
    }
}
