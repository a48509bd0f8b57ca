mod commands;
mod error;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::EXIT_USAGE;

#[derive(Parser, Debug)]
#[command(name = "ghost-deblur", version, about = "Lightweight GAN motion deblurring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a paired blurred/sharp corpus from sharp frame sequences.
    Synth(SynthArgs),
    /// Train the generator and discriminators on a corpus.
    Train(TrainArgs),
    /// Deblur one image or every PNG in a directory.
    Deblur(DeblurArgs),
    /// Score a checkpoint on a corpus split: PSNR/SSIM, cost, detection.
    Eval(EvalArgs),
    /// Analytic FLOP count of the generator.
    Flops(FlopsArgs),
    /// Parameter count and checkpoint size of the generator.
    Size(SizeArgs),
    /// Write a freshly initialized generator checkpoint.
    Init(InitArgs),
    /// Print a fully resolved configuration as TOML.
    Config(ConfigArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory of sharp PNG frames, or of one subdirectory per scene.
    #[arg(long, conflicts_with = "procedural", required_unless_present = "procedural")]
    pub frames: Option<PathBuf>,
    /// Render procedural marker scenes into `<out>/frames` and use them.
    #[arg(long)]
    pub procedural: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML with optional `[synth]` and `[procedural]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed odd window length.
    #[arg(long)]
    pub window: Option<u64>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub window_range: Option<Vec<u64>>,
    #[arg(long)]
    pub stride: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Procedural scene count.
    #[arg(long)]
    pub scenes: Option<u64>,
    #[arg(long)]
    pub frames_per_scene: Option<u64>,
    /// Procedural frame side in pixels.
    #[arg(long)]
    pub size: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Base configuration before the file and flags are applied.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub images_per_epoch: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<u64>,
    #[arg(long)]
    pub crop_size: Option<u64>,
    #[arg(long)]
    pub lr_generator: Option<f64>,
    #[arg(long)]
    pub lr_discriminator: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Log every this many steps.
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
}

#[derive(Args, Debug)]
pub struct DeblurArgs {
    /// PNG file or directory of PNG files.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Generator configuration the checkpoint must match.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DetectorChoice {
    /// Built-in decoder for the procedural markers.
    Stub,
    /// External executable speaking the JSON-lines contract.
    Process,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DetectorFamily {
    Apriltag3Family,
    ArucoFamily,
    Stub,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "stub")]
    pub detector: DetectorChoice,
    /// Executable for `--detector process`.
    #[arg(long)]
    pub detector_cmd: Option<PathBuf>,
    #[arg(long = "detector-arg")]
    pub detector_args: Vec<String>,
    #[arg(long, value_enum, default_value = "apriltag3-family")]
    pub detector_family: DetectorFamily,
    #[arg(long, default_value_t = 16)]
    pub detector_batch: usize,
    /// Skip marker detection.
    #[arg(long)]
    pub no_detector: bool,
    /// Also time inference on the evaluated images.
    #[arg(long)]
    pub benchmark: bool,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Corpus split to score.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    #[arg(long, default_value_t = 720)]
    pub height: usize,
    #[arg(long, default_value_t = 1280)]
    pub width: usize,
    /// Generator configuration TOML.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the per-layer table.
    #[arg(long)]
    pub table: bool,
    /// Directory for a JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SizeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    /// Output directory; the checkpoint is `generator.bin`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Zero the output projection so the model is the identity.
    #[arg(long)]
    pub zero_head: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConfigKind {
    Train,
    Synth,
    Generator,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    #[arg(value_enum)]
    pub kind: ConfigKind,
    /// Training preset for `train`.
    #[arg(long, default_value = "desk")]
    pub preset: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Deblur(a) => commands::deblur(a),
        Command::Eval(a) => commands::eval(a),
        Command::Flops(a) => commands::flops(a),
        Command::Size(a) => commands::size(a),
        Command::Init(a) => commands::init(a),
        Command::Config(a) => commands::config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
