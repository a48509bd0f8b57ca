use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::TrainConfig;
use super::state::{stream_rng, Batch, StepRecord, Stream, TrainState};
use crate::blursynth::{Corpus, Split};
use crate::checkpoint::Checkpoint;
use crate::error::{contract, Error, Result};
use crate::image::ImageTensor;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LATEST_FILE: &str = "latest";

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step}.bin")
}

/// In-memory training pairs `(blurred, sharp)`.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pairs: Vec<(ImageTensor, ImageTensor)>,
}

impl TrainingData {
    pub fn new(pairs: Vec<(ImageTensor, ImageTensor)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(contract("training data is empty"));
        }
        for (i, (b, s)) in pairs.iter().enumerate() {
            if b.dims() != s.dims() || b.channels() != 3 {
                return Err(contract(format!("training pair {i} is misaligned: {:?} vs {:?}", b.dims(), s.dims())));
            }
        }
        Ok(Self { pairs })
    }

    /// The train split of a corpus.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let recs = corpus.pairs(Split::Train);
        if recs.is_empty() {
            return Err(contract(format!("corpus {} has no training pairs", corpus.root.display())));
        }
        Self::new(recs.into_iter().map(|r| corpus.load_pair(r)).collect::<Result<Vec<_>>>()?)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn check_crop(&self, crop: usize) -> Result<()> {
        match self.pairs.iter().position(|(b, _)| b.height() < crop || b.width() < crop) {
            Some(i) => Err(contract(format!(
                "training pair {i} is {}x{}, smaller than the {crop}x{crop} crop",
                self.pairs[i].0.height(),
                self.pairs[i].0.width()
            ))),
            None => Ok(()),
        }
    }

    /// Pair index of the `g`-th sample drawn in the run; each pass over the
    /// data is a fresh permutation.
    fn sample_index(&self, seed: u64, g: u64) -> usize {
        let len = self.pairs.len() as u64;
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut stream_rng(seed, Stream::DataOrder, g / len));
        order[(g % len) as usize]
    }

    /// Batch for zero-based step `step`, a pure function of `(cfg, step)`.
    pub fn batch(&self, cfg: &TrainConfig, step: u64) -> Result<Batch> {
        self.check_crop(cfg.crop_size)?;
        let mut rng = stream_rng(cfg.seed, Stream::DataCrop, step);
        let mut blurred = Vec::with_capacity(cfg.batch_size);
        let mut sharp = Vec::with_capacity(cfg.batch_size);
        for b in 0..cfg.batch_size as u64 {
            let (blur, sh) = &self.pairs[self.sample_index(cfg.seed, step * cfg.batch_size as u64 + b)];
            let s = cfg.crop_size;
            let y = rng.gen_range(0..=blur.height() - s);
            let x = rng.gen_range(0..=blur.width() - s);
            blurred.push(blur.crop(y, x, s, s)?);
            sharp.push(sh.crop(y, x, s, s)?);
        }
        Ok(Batch {
            blurred: ImageTensor::stack(&blurred.iter().collect::<Vec<_>>())?,
            sharp: ImageTensor::stack(&sharp.iter().collect::<Vec<_>>())?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub records: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
}

fn write_checkpoint(state: &TrainState, out: &Path) -> Result<PathBuf> {
    let name = checkpoint_name(state.step);
    let path = out.join(&name);
    state.to_checkpoint()?.save(&path)?;
    let latest = out.join(LATEST_FILE);
    std::fs::write(&latest, format!("{name}\n")).map_err(|e| Error::io(format!("writing {}", latest.display()), e))?;
    Ok(path)
}

/// Checkpoint named by `<dir>/latest`.
pub fn latest_checkpoint(dir: &Path) -> Result<PathBuf> {
    let p = dir.join(LATEST_FILE);
    let name = std::fs::read_to_string(&p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
    Ok(dir.join(name.trim()))
}

/// Keep metric lines with `step <= upto` so a resumed run does not duplicate
/// records.
fn truncate_metrics(path: &Path, upto: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let kept: String = text
        .lines()
        .filter(|l| serde_json::from_str::<StepRecord>(l).is_ok_and(|r| r.step <= upto))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(path, kept).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Run (or continue) training, writing checkpoints and `metrics.jsonl` into
/// `out`. `on_step` observes every record.
pub fn train(
    cfg: &TrainConfig,
    data: &TrainingData,
    out: &Path,
    resume: Option<&Path>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainSummary> {
    cfg.validate()?;
    data.check_crop(cfg.crop_size)?;
    let mut state = match resume {
        Some(p) => TrainState::from_checkpoint(&Checkpoint::load(p)?, cfg)?,
        None => TrainState::new(cfg)?,
    };
    let total = cfg.total_steps();
    if state.step > total {
        return Err(Error::Config(format!("checkpoint is at step {}, past the configured {total} steps", state.step)));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let metrics_path = out.join(METRICS_FILE);
    match resume {
        Some(_) => truncate_metrics(&metrics_path, state.step)?,
        None => {
            if metrics_path.exists() {
                std::fs::remove_file(&metrics_path).map_err(|e| Error::io(format!("resetting {}", metrics_path.display()), e))?;
            }
        }
    }
    let mut metrics = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(format!("opening {}", metrics_path.display()), e))?;

    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let mut last_good = resume.map(Path::to_path_buf);
    if state.step == 0 {
        let p = write_checkpoint(&state, out)?;
        last_good = Some(p.clone());
        checkpoints.push(p);
    }
    while state.step < total {
        let batch = data.batch(cfg, state.step)?;
        let rec = match state.training_step(&batch) {
            Ok(r) => r,
            Err(Error::TrainingDiverged { step, what, .. }) => {
                return Err(Error::TrainingDiverged { step, what, last_good });
            }
            Err(e) => return Err(e),
        };
        writeln!(metrics, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io("writing metrics", e))?;
        on_step(&rec);
        records.push(rec);
        if state.step == total || (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0) {
            let p = write_checkpoint(&state, out)?;
            last_good = Some(p.clone());
            checkpoints.push(p);
        }
    }
    let final_checkpoint = match checkpoints.last() {
        Some(p) => p.clone(),
        None => write_checkpoint(&state, out)?,
    };
    Ok(TrainSummary { records, checkpoints, final_checkpoint })
}
