use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "biasal", version, about = "RGB-D salient object detection with bilateral attention")]
pub struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic RGB-D dataset with a manifest.
    Synth(SynthArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Write saliency maps for every manifest row.
    Infer(InferArgs),
    /// Score predictions against manifest ground truth.
    Eval(EvalArgs),
    /// Time forward passes.
    Bench(BenchArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print parameter and multiply-accumulate counts.
    Report(ReportArgs),
}

/// Network selection shared by the model-building commands. Flags override
/// values read from `--config`.
#[derive(Args, Debug, Clone, Default)]
pub struct NetArgs {
    /// TOML run configuration with optional [net] and [train] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reduced-width backbone at 64×64 input.
    #[arg(long)]
    pub toy: bool,
    /// Number of multi-scale modules, counted from the coarsest level.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=5))]
    pub mbam: Option<u8>,
    /// Drop the depth stream.
    #[arg(long)]
    pub no_depth: bool,
    /// Foreground-first branch only.
    #[arg(long, conflicts_with_all = ["bf_only", "plain_conv"])]
    pub ff_only: bool,
    /// Background-first branch only.
    #[arg(long, conflicts_with = "plain_conv")]
    pub bf_only: bool,
    /// Unweighted convolutions instead of attention branches.
    #[arg(long)]
    pub plain_conv: bool,
    /// Network input height and width (multiples of 32).
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub input_size: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of samples.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Image height and width.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64, 64])]
    pub size: Vec<usize>,
    #[arg(long, default_value = "synth")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, default_value = "synth/manifest.csv")]
    pub manifest: PathBuf,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    /// Seeds initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub checkpoint_every: Option<u64>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "runs/pred")]
    pub out: PathBuf,
    /// Accepted for interface uniformity; inference is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaxModeArg {
    /// Maximum of the dataset-mean curve.
    MeanCurve,
    /// Mean of per-image maxima.
    PerImageMax,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<name>.png` predictions.
    #[arg(long)]
    pub pred: PathBuf,
    /// Where report.csv, pr.csv and pr.svg are written.
    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = MaxModeArg::MeanCurve)]
    pub max_mode: MaxModeArg,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Also write the measurements as CSV into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random seeds per case.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    /// Only run cases whose name contains this string.
    #[arg(long)]
    pub case: Option<String>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Also report every multi-scale module count from 0 to 5.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report as CSV into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
