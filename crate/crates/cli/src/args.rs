use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ept_core::denoise::NoiseMode;
use ept_core::model::PoolMode;
use ept_core::ModelConfig;

#[derive(Debug, Parser)]
#[command(name = "ept", version, about = "Equivariant transformer with block-level denoising pretraining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse structures and write graph shards.
    Preprocess(PreprocessArgs),
    /// Denoising pretraining on graph shards.
    Pretrain(PretrainArgs),
    /// Scalar regression with the denoising auxiliary term.
    Finetune(FinetuneArgs),
    /// Run the property suite.
    Verify(VerifyArgs),
    /// Write perturbed copies of one structure and their targets.
    SampleNoise(SampleNoiseArgs),
    /// Plot a metrics CSV as SVG and summarize it.
    Report(ReportArgs),
}

/// Output directory shared by every command.
#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory; created when missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace outputs of an earlier run in the same directory.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Input files or glob patterns (.xyz, .sdf, .mol, .pdb).
    #[arg(required = true)]
    pub inputs: Vec<String>,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 1.6)]
    pub delta_topo: f64,
    #[arg(long, default_value_t = 10.0)]
    pub delta_max: f64,
    /// Graphs per shard file.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub shard_size: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// h = 512, six layers.
    Paper,
    /// h = 64, three layers; fits one CPU core.
    Desk,
    /// h = 8, two layers; exhaustive gradient checks.
    Tiny,
}

impl Profile {
    pub fn model(self) -> ModelConfig {
        match self {
            Profile::Paper => ModelConfig::default(),
            Profile::Desk => ModelConfig::desk(),
            Profile::Tiny => ModelConfig::tiny(),
        }
    }
}

fn parse_mode(s: &str) -> Result<NoiseMode, String> {
    NoiseMode::parse(s).ok_or_else(|| format!("unknown denoise mode {s:?}; expected atom, block-T or block-C"))
}

/// Training configuration: a TOML file, a model profile, and flag overrides (flag > file > default).
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML file with [model] and [train] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model profile used when no config file is given.
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub max_vertices: Option<usize>,
    #[arg(long)]
    pub sigma_t: Option<f64>,
    #[arg(long)]
    pub sigma_r: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<NoiseMode>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Overrides both the config file and EPT_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn has_overrides(&self) -> bool {
        self.config.is_some()
            || self.lr.is_some()
            || self.min_lr.is_some()
            || self.epochs.is_some()
            || self.max_steps.is_some()
            || self.max_vertices.is_some()
            || self.sigma_t.is_some()
            || self.sigma_r.is_some()
            || self.mode.is_some()
            || self.lambda.is_some()
            || self.seed.is_some()
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Shard files or glob patterns.
    #[arg(required = true)]
    pub shards: Vec<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Continue from a checkpoint; its configuration is used unchanged.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write a checkpoint every this many epochs, besides the final one.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub checkpoint_every: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Pool {
    Atom,
    Block,
    Graph,
}

impl From<Pool> for PoolMode {
    fn from(p: Pool) -> Self {
        match p {
            Pool::Atom => PoolMode::Atom,
            Pool::Block => PoolMode::Block,
            Pool::Graph => PoolMode::Graph,
        }
    }
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Shard files or glob patterns.
    #[arg(required = true)]
    pub shards: Vec<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Start from the parameters of a pretraining checkpoint with the same model configuration.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Pool::Graph)]
    pub pool: Pool,
    /// One label per line, in shard order; defaults to each graph's atom count.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    AbsoluteVectorInit,
    FaultySiluGrad,
    SkipRescale,
    WidenedSampler,
    StretchedBlocks,
    NaiveAsTiled,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// Run only these check groups (repeatable).
    #[arg(long)]
    pub only: Vec<String>,
    /// Overrides EPT_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Equivariance trials.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    /// Inject a deliberate defect (repeatable); the matching check should fail.
    #[arg(long, value_enum)]
    pub inject: Vec<Fault>,
}

#[derive(Debug, Args)]
pub struct SampleNoiseArgs {
    /// Structure file (.xyz, .sdf, .mol, .pdb).
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, value_parser = parse_mode)]
    pub mode: NoiseMode,
    #[arg(long, default_value_t = 0.04)]
    pub sigma_t: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma_r: f64,
    /// Number of perturbed frames.
    #[arg(long, default_value_t = 10)]
    pub n: u64,
    /// Overrides EPT_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSV written by pretrain or finetune.
    pub metrics: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
}
