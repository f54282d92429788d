use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use faintline::datagen::{read_manifest, Split, Task};
use faintline::InputNorm;

use crate::RUN_CONFIG;

#[derive(Parser, Debug)]
#[command(name = "faintline", version, about = "Faint-edge detection and edge-preserving denoising")]
pub struct Cli {
    /// Where to write the resolved configuration (default: next to the main output).
    #[arg(long, global = true, value_name = "PATH")]
    pub run_config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic faint-edge dataset.
    GenEdges(GenEdgesArgs),
    /// Generate a Gaussian-noise denoising dataset.
    GenDenoise(GenDenoiseArgs),
    /// Train a U-Net on a generated dataset.
    Train(TrainArgs),
    /// Score a checkpoint, the Canny baseline, or a single output image.
    Eval(EvalArgs),
    /// Edge map of one image.
    Detect(DetectArgs),
    /// Denoise one image.
    Denoise(DenoiseArgs),
    /// Median forward time per input size.
    Bench(BenchArgs),
    /// Finite-difference check of every gradient.
    Gradcheck(GradcheckArgs),
    /// F-measure against SNR for a model and Canny on the evaluation pattern.
    Sweep(SweepArgs),
    /// Repeat a run from its run-config.json.
    #[serde(skip)]
    Rerun {
        config: PathBuf,
    },
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenEdgesArgs {
    /// Number of base patterns.
    #[arg(long, default_value_t = 100)]
    pub base: usize,
    /// Side of the square patterns.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,1.2,1.4,1.6,1.8,2")]
    pub snrs: Vec<f64>,
    /// Skip the mirrored copy of each pattern.
    #[arg(long)]
    pub no_hflip: bool,
    /// Record that training should not flip vertically.
    #[arg(long)]
    pub no_vflip: bool,
    #[arg(long, default_value_t = faintline::datagen::DEFAULT_PURE_NOISE_FRACTION)]
    pub pure_noise: f64,
    #[arg(long, default_value_t = faintline::datagen::DEFAULT_TRAIN_FRACTION)]
    pub train_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDenoiseArgs {
    /// Number of synthetic clean images (ignored with --images).
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Side of the synthetic images.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Directory of clean PGM/PPM images to use instead of synthetic ones.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Noise standard deviations on the 0..255 scale.
    #[arg(long, value_delimiter = ',', default_value = "25")]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = faintline::datagen::DEFAULT_TRAIN_FRACTION)]
    pub train_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset directory written by gen-edges or gen-denoise.
    #[arg(long)]
    pub data: PathBuf,
    /// Final checkpoint; the best one is written next to it.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Training log CSV (default: checkpoint path with `.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Epochs (default: 100 for edges, 200 for denoising).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Adam)]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Momentum for --optimizer sgd.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Weight of the edge-preservation loss (denoising only).
    #[arg(long)]
    pub lambda_edge: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Channels of the first encoder level.
    #[arg(long, default_value_t = faintline::unet::FULL_BASE_WIDTH)]
    pub width: usize,
    /// Random square crop side; 0 trains on full images.
    #[arg(long, default_value_t = 128)]
    pub crop: usize,
    /// Evaluate every this many epochs; 0 disables evaluation.
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub eval_split: SplitArg,
    #[arg(long, default_value_t = faintline::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Fresh noise draws per evaluation sample; 0 scores the stored inputs.
    #[arg(long, default_value_t = 0)]
    pub draws: usize,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long, default_value_t = 10.0)]
    pub clip: f64,
    /// Reuse the stored noisy inputs instead of drawing fresh noise each epoch.
    #[arg(long)]
    pub no_resample: bool,
    /// Disable online vertical flips.
    #[arg(long)]
    pub no_vflip: bool,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Input shift before the first layer (default depends on the task).
    #[arg(long, allow_negative_numbers = true)]
    pub input_shift: Option<f64>,
    /// Input scale after the shift (default depends on the task).
    #[arg(long, allow_negative_numbers = true)]
    pub input_scale: Option<f64>,
    /// Continue from the state file next to --ckpt if it exists.
    #[arg(long)]
    pub resume: bool,
    /// Task read from the dataset manifest; filled in automatically.
    #[arg(skip)]
    #[serde(default)]
    pub task: Option<Task>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Dataset directory to score.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to score.
    #[arg(long, conflicts_with = "canny")]
    pub ckpt: Option<PathBuf>,
    /// Score the Canny baseline with default parameters instead of a model.
    #[arg(long)]
    pub canny: bool,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = faintline::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Fresh noise draws per sample; 0 scores the stored inputs.
    #[arg(long, default_value_t = 0)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// PSNR peak on the unit intensity scale.
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    /// Output image to score against --clean or --labels.
    #[arg(long, conflicts_with_all = ["data", "ckpt", "canny"])]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred", conflicts_with = "labels")]
    pub clean: Option<PathBuf>,
    /// Binary edge labels for an edge-map --pred.
    #[arg(long, requires = "pred")]
    pub labels: Option<PathBuf>,
    /// CSV destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the binary mask at this threshold instead of the probability map.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Clean reference; prints PSNR and SSIM of the written image.
    #[arg(long)]
    pub clean: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "128,256")]
    pub sizes: Vec<usize>,
    /// Timed runs per size, after one discarded warm-up.
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    /// CSV destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// Random seeds for the single-operation checks.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Base width of the network check.
    #[arg(long, default_value_t = 4)]
    pub width: usize,
    /// Input side of the network check.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = faintline::selfcheck::OP_TOL)]
    pub op_tol: f64,
    #[arg(long, default_value_t = faintline::selfcheck::NETWORK_TOL)]
    pub network_tol: f64,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,1.2,1.4,1.6,1.8,2")]
    pub snrs: Vec<f64>,
    /// Noise draws per SNR.
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side of the evaluation pattern.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = faintline::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub svg: PathBuf,
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

impl Command {
    /// Makes every path absolute and fills every task-dependent default, so
    /// the command is self-contained.
    pub fn resolve(mut self) -> anyhow::Result<Command> {
        self.absolutize()?;
        Ok(match self {
            Command::Train(mut a) => {
                let task = read_manifest(&a.data).with_context(|| format!("reading dataset {}", a.data.display()))?.task;
                let norm = match task {
                    Task::Edges => InputNorm::EDGES,
                    Task::Denoise => InputNorm::DENOISE,
                };
                a.task = Some(task);
                a.epochs.get_or_insert(match task {
                    Task::Edges => 100,
                    Task::Denoise => 200,
                });
                a.lambda_edge.get_or_insert(0.0);
                a.input_shift.get_or_insert(norm.shift);
                a.input_scale.get_or_insert(norm.scale);
                if a.log.is_none() {
                    let mut s = a.ckpt.as_os_str().to_owned();
                    s.push(".log.csv");
                    a.log = Some(PathBuf::from(s));
                }
                Command::Train(a)
            }
            other => other,
        })
    }

    fn absolutize(&mut self) -> anyhow::Result<()> {
        fn abs(p: &mut PathBuf) -> anyhow::Result<()> {
            *p = std::path::absolute(&*p).with_context(|| format!("resolving {}", p.display()))?;
            Ok(())
        }
        fn abs_opt(p: &mut Option<PathBuf>) -> anyhow::Result<()> {
            p.as_mut().map_or(Ok(()), abs)
        }
        match self {
            Command::GenEdges(a) => abs(&mut a.out),
            Command::GenDenoise(a) => {
                abs_opt(&mut a.images)?;
                abs(&mut a.out)
            }
            Command::Train(a) => {
                abs(&mut a.data)?;
                abs(&mut a.ckpt)?;
                abs_opt(&mut a.log)
            }
            Command::Eval(a) => {
                for p in [&mut a.data, &mut a.ckpt, &mut a.pred, &mut a.clean, &mut a.labels, &mut a.out] {
                    abs_opt(p)?;
                }
                Ok(())
            }
            Command::Detect(a) => {
                abs(&mut a.ckpt)?;
                abs(&mut a.input)?;
                abs(&mut a.out)
            }
            Command::Denoise(a) => {
                abs(&mut a.ckpt)?;
                abs(&mut a.input)?;
                abs(&mut a.out)?;
                abs_opt(&mut a.clean)
            }
            Command::Gradcheck(_) => Ok(()),
            Command::Bench(a) => {
                abs(&mut a.ckpt)?;
                abs_opt(&mut a.out)
            }
            Command::Sweep(a) => {
                abs(&mut a.ckpt)?;
                abs(&mut a.csv)?;
                abs(&mut a.svg)
            }
            Command::Rerun { config } => abs(config),
        }
    }

    pub fn default_run_config(&self) -> PathBuf {
        match self {
            Command::GenEdges(a) => a.out.join(RUN_CONFIG),
            Command::GenDenoise(a) => a.out.join(RUN_CONFIG),
            Command::Train(a) => sibling(&a.ckpt, RUN_CONFIG),
            Command::Detect(a) => sibling(&a.out, RUN_CONFIG),
            Command::Denoise(a) => sibling(&a.out, RUN_CONFIG),
            Command::Sweep(a) => sibling(&a.csv, RUN_CONFIG),
            Command::Eval(EvalArgs { out: Some(o), .. }) | Command::Bench(BenchArgs { out: Some(o), .. }) => {
                sibling(o, RUN_CONFIG)
            }
            _ => PathBuf::from(RUN_CONFIG),
        }
    }
}

impl Command {
    /// Combinations clap cannot express; reported as usage errors.
    pub fn usage_error(&self) -> Option<&'static str> {
        match self {
            Command::Eval(a) => match (&a.data, &a.pred) {
                (Some(_), _) if a.ckpt.is_none() && !a.canny => Some("--data needs --ckpt or --canny"),
                (None, None) => Some("give --data with --ckpt/--canny, or --pred with --clean/--labels"),
                (None, Some(_)) if a.clean.is_none() && a.labels.is_none() => Some("--pred needs --clean or --labels"),
                _ => None,
            },
            Command::Bench(a) if a.repeat == 0 => Some("--repeat must be at least 1"),
            Command::Bench(a) if a.sizes.is_empty() => Some("--sizes must list at least one size"),
            _ => None,
        }
    }
}

pub fn read_run_config(path: &Path) -> anyhow::Result<Command> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a run configuration", path.display()))
}
