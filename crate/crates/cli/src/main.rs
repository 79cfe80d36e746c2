//! `grainxai` command-line entry point.
//!
//! Exit codes: 0 success, 1 unexpected runtime failure, 2 usage error,
//! 3 training failure or divergence, 4 model artifact mismatch.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use grainxai::dataset::PreprocessMode;
use grainxai::model::Depth;
use grainxai::training::OptimizerKind;

pub const DATA_ENV: &str = "GRAINXAI_DATA";

#[derive(Debug, Parser)]
#[command(name = "grainxai", version, about = "Rice-grain CNN classifier with LIME and KernelSHAP explanations")]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Seeded stratified train/val/test split of a dataset directory.
    Split(SplitArgs),
    /// Train the CNN on a split manifest.
    Train(TrainArgs),
    /// Confusion matrix, per-class metrics and ROC curves on one split.
    Eval(EvalArgs),
    /// LIME or KernelSHAP explanation of one image.
    Explain(ExplainArgs),
    /// Dump intermediate preprocessing stages of one image as PNG.
    Preprocess(PreprocessArgs),
    /// Per-class image counts of a dataset directory.
    Stats(StatsArgs),
    /// Cartesian hyperparameter sweep on a class-balanced subset.
    Sweep(SweepArgs),
    /// Render a procedural single-grain corpus in the dataset layout.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn enabled(self) -> bool {
        self == Switch::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preprocess {
    Raw,
    Mask,
}

impl From<Preprocess> for PreprocessMode {
    fn from(p: Preprocess) -> Self {
        match p {
            Preprocess::Raw => PreprocessMode::Raw,
            Preprocess::Mask => PreprocessMode::Mask,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DepthArg {
    Shallow,
    Canonical,
    Deep,
}

impl From<DepthArg> for Depth {
    fn from(d: DepthArg) -> Self {
        match d {
            DepthArg::Shallow => Depth::Shallow,
            DepthArg::Canonical => Depth::Canonical,
            DepthArg::Deep => Depth::Deep,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Adamax,
    Adam,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adamax => OptimizerKind::Adamax,
            OptimizerArg::Adam => OptimizerKind::Adam,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lime,
    Shap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SuperpixelKind {
    /// Grid cells split along the grain boundary.
    Mask,
    /// Plain rectangular grid.
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for grainxai::dataset::Split {
    fn from(s: SplitArg) -> Self {
        use grainxai::dataset::Split;
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    /// Dataset root containing one directory per variety.
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_delimiter = ',', num_args = 1)]
    pub ratios: Vec<f64>,
    #[arg(long, default_value = "manifest.json")]
    pub manifest: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long, default_value = "manifest.json")]
    pub manifest: PathBuf,
    #[arg(long, default_value = ".")]
    pub outdir: PathBuf,
    /// Model file path; defaults to `<outdir>/model.rgc`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adamax)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub augment: Switch,
    #[arg(long, value_enum, default_value_t = Preprocess::Raw)]
    pub preprocess: Preprocess,
    #[arg(long, value_enum, default_value_t = DepthArg::Canonical)]
    pub depth: DepthArg,
    /// Cap on training images per class; validation is capped in proportion.
    #[arg(long)]
    pub subset: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, default_value = "model.rgc")]
    pub model: PathBuf,
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long, default_value = "manifest.json")]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value = ".")]
    pub outdir: PathBuf,
    /// Defaults to the mode recorded next to the model, else `raw`.
    #[arg(long, value_enum)]
    pub preprocess: Option<Preprocess>,
    /// Same per-class cap as `train --subset`, scaled to the chosen split.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long, default_value = "model.rgc")]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Lime)]
    pub method: Method,
    /// Superpixel grid size per side.
    #[arg(long, default_value_t = 6)]
    pub grid: usize,
    #[arg(long, value_enum, default_value_t = SuperpixelKind::Mask)]
    pub superpixels: SuperpixelKind,
    /// LIME perturbation samples, including the unperturbed image.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// KernelSHAP coalition budget when the segment count rules out exact mode.
    #[arg(long, default_value_t = grainxai::explain::SAMPLED_COALITIONS)]
    pub coalitions: usize,
    /// `auto` explains the predicted class.
    #[arg(long, default_value = "auto")]
    pub class: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.25)]
    pub kernel_width: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ridge: f64,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long, value_enum)]
    pub preprocess: Option<Preprocess>,
    #[arg(long, default_value = ".")]
    pub outdir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Side length the image is resized to before processing.
    #[arg(long, default_value_t = grainxai::IMAGE_SIZE)]
    pub size: usize,
    #[arg(long, default_value_t = 1.4)]
    pub sigma: f64,
    #[arg(long, default_value_t = 50.0)]
    pub low: f64,
    #[arg(long, default_value_t = 150.0)]
    pub high: f64,
    #[arg(long, default_value = ".")]
    pub outdir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long, default_value = ".")]
    pub outdir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// JSON object with any of the axes lr, batch, filters, dropout, dense_layers.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long, default_value = "manifest.json")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub augment: Switch,
    #[arg(long, value_enum, default_value_t = Preprocess::Raw)]
    pub preprocess: Preprocess,
    #[arg(long, default_value = ".")]
    pub outdir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value = "synthetic")]
    pub outdir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Side length of the rendered images.
    #[arg(long, default_value_t = 250)]
    pub size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    let exec = if cli.sequential { grainxai::par::Execution::Sequential } else { grainxai::par::Execution::Parallel };
    match commands::run(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
