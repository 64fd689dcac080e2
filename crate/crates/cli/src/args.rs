use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vipac::envs::EnvKind;

#[derive(Parser, Debug)]
#[command(name = "vipac", version)]
#[command(about = "Variational imitation policies with PAC-Bayes generalization bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Roll out the scripted expert and write a demonstration dataset.
    #[command(args_override_self = true)]
    GenDemos(GenDemosArgs),
    /// Fit a variational policy to a demonstration dataset.
    #[command(args_override_self = true)]
    Train(TrainCmdArgs),
    /// Evaluate the generalization bound of a checkpoint.
    #[command(args_override_self = true)]
    Bound(BoundArgs),
    /// Run one of the experiment harnesses.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Subcommand, Debug)]
pub enum Experiment {
    /// Correlation between the cost and bound columns of a trace.
    #[command(args_override_self = true)]
    Correlate(CorrelateArgs),
    /// Holdout risk against the bound over tasks and seeds.
    #[command(args_override_self = true)]
    VerifyBound(VerifyBoundArgs),
    /// Variational policy against the MSE baseline on a perturbed task.
    #[command(args_override_self = true)]
    Generalize(GeneralizeArgs),
    /// Likelihood-variance sweep over the C1/C2/C3 cells.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenDemos(_) => "gen-demos",
            Command::Train(_) => "train",
            Command::Bound(_) => "bound",
            Command::Experiment(Experiment::Correlate(_)) => "experiment correlate",
            Command::Experiment(Experiment::VerifyBound(_)) => "experiment verify-bound",
            Command::Experiment(Experiment::Generalize(_)) => "experiment generalize",
            Command::Experiment(Experiment::Sweep(_)) => "experiment sweep",
        }
    }
}

/// Flat `key=value` file whose keys are long flag names; flags given on
/// the command line take precedence.
#[derive(Args, Debug, Clone, Serialize)]
pub struct ConfigArg {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EnvArgs {
    #[arg(long, default_value = "pendulum")]
    pub env: EnvKind,
    /// Physical parameter overrides, e.g. `m=1.5,l=0.7`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 5000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub batches: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Likelihood variance, also the subgaussian variance factor.
    #[arg(long, default_value_t = 100.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Monte-Carlo samples per training step.
    #[arg(long, default_value_t = 1)]
    pub mc_samples: usize,
    #[arg(long, default_value = "90,30,10", value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// Disable gradient-norm clipping.
    #[arg(long)]
    pub clip_off: bool,
    #[arg(long, default_value_t = 100.0)]
    pub clip_norm: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GenDemosArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub env: EnvArgs,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Trajectory JSON lines; defaults to the dataset path with a `.jsonl`
    /// extension.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<PathBuf>,
    /// Also split by episode: the first `train-fraction` of the episodes go
    /// to `--out`, the rest to this file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainCmdArgs {
    /// Demonstration CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Trace CSV; defaults to the checkpoint path with a `.trace.csv`
    /// extension.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub hyper: HyperArgs,
    /// Record elapsed milliseconds in the trace (makes it non-reproducible).
    #[arg(long)]
    pub record_wallclock: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BoundArgs {
    /// Training CSV the checkpoint was fitted to.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Validation CSV for the holdout risk.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout: Option<PathBuf>,
    /// Defaults to the checkpoint's delta.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Defaults to the checkpoint's beta.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 30)]
    pub mc_samples: usize,
    /// Seed of the evaluation noise; defaults to the checkpoint's seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value_t = 999)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct HarnessArgs {
    #[arg(long, default_value = "0,1,2,3,4,5,6,7,8,9", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub hyper: HyperArgs,
    /// Demonstration episodes per seed.
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Monte-Carlo samples for bound and holdout evaluation.
    #[arg(long, default_value_t = 30)]
    pub eval_samples: usize,
    /// Sampled networks averaged by the variational policy.
    #[arg(long, default_value_t = 10)]
    pub policy_samples: usize,
    #[arg(long, default_value_t = 10)]
    pub rollouts: usize,
    /// Worker threads; reports do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Report JSON; an aligned-text table is written next to it with a
    /// `.txt` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct VerifyBoundArgs {
    #[arg(long = "env", default_value = "pendulum,racer", value_delimiter = ',')]
    #[serde(rename = "env")]
    pub envs: Vec<EnvKind>,
    #[command(flatten)]
    #[serde(flatten)]
    pub harness: HarnessArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GeneralizeArgs {
    /// `--variant` defaults to the task's canonical variant.
    #[command(flatten)]
    #[serde(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub harness: HarnessArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub env: EnvArgs,
    /// `name=beta` cells, strictly decreasing in beta.
    #[arg(long, default_value = "C1=1000,C2=1,C3=0.01")]
    pub cells: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub harness: HarnessArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
}
