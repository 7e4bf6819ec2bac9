use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "elastreg", version, about = "Parametric and elastic registration of endoscopy frames")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a template frame onto a reference frame.
    Register(RegisterArgs),
    /// NDM curve over consecutive frames of a directory.
    Speed(SpeedArgs),
    /// Write a synthetic pair with known ground truth.
    Synth(SynthArgs),
    /// Synthetic benchmark sweep over a frame directory.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mpir,
    Meir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Rigid,
    Elastic,
    RigidElastic,
}

/// Options shared by every command. Unset options fall back to the config
/// file, then to the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Plain `key=value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Run both methods.
    #[arg(long)]
    pub both: bool,
    /// Comma-separated, strictly decreasing smoothing parameters.
    #[arg(long)]
    pub scales: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Registration grid size per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Pre-register on a half-resolution grid first.
    #[arg(long)]
    pub two_level: bool,
    /// Elastic passes (1 or 2).
    #[arg(long)]
    pub iterate: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Side length frames are resampled to on ingestion.
    #[arg(long)]
    pub frame_size: Option<usize>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// No summary on stdout.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    pub reference: PathBuf,
    pub template: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SpeedArgs {
    pub frames: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub frame: PathBuf,
    #[arg(long, value_enum, default_value = "rigid-elastic")]
    pub kind: KindArg,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Degrees.
    #[arg(long, default_value_t = 0.0)]
    pub rotation: f64,
    /// Peak elastic displacement in cells.
    #[arg(long, default_value_t = 5.0)]
    pub intensity: f64,
    #[arg(long, default_value_t = 5.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.25)]
    pub pad: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub frames: PathBuf,
    /// i, ii, iii or iv.
    #[arg(long)]
    pub case: String,
    /// Comma-separated sweep values (rotations in degrees or scale factors).
    #[arg(long)]
    pub sweep: Option<String>,
    /// Case iv: sweep rotations at this scale.
    #[arg(long, conflicts_with = "fixed_rotation")]
    pub fixed_scale: Option<f64>,
    /// Case iv: sweep scales at this rotation (degrees).
    #[arg(long)]
    pub fixed_rotation: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub intensity: f64,
    #[arg(long, default_value_t = 5.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.25)]
    pub pad: f64,
    #[command(flatten)]
    pub common: Common,
}
