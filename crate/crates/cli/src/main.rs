//! `frmdn`: generate data, train, evaluate and sample FRMDN models, and train
//! controllers in model rollouts.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad flags, config or inputs detected before any compute. Exit code 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "frmdn", version, about = "Flow-based recurrent mixture density networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as FSEQ (and optionally CSV).
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus a metrics CSV.
    Train(TrainArgs),
    /// Mean per-step NLL of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Free-running rollouts from a checkpoint, as CSV.
    Sample(SampleArgs),
    /// Compare analytic and finite-difference gradients of a random model.
    Gradcheck(GradcheckArgs),
    /// Mixture parameter counts for one head.
    Paramcount(ParamcountArgs),
    /// CMA-ES search for a linear controller inside model rollouts.
    Dream(DreamArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// ar, switching or control.
    #[arg(long, default_value = "ar")]
    pub kind: String,
    #[arg(long, default_value_t = 64)]
    pub q: usize,
    #[arg(long, default_value_t = 256)]
    pub t: usize,
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.8)]
    pub corr: f64,
    #[arg(long, default_value_t = 2)]
    pub modes: usize,
    #[arg(long, default_value_t = 2)]
    pub d_action: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Model architecture flags, named after the config keys.
#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub d_action: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub flow_depth: Option<usize>,
    /// diagonal, tied or logistic.
    #[arg(long)]
    pub structure: Option<String>,
    /// on or off.
    #[arg(long)]
    pub flow: Option<String>,
    #[arg(long)]
    pub c_width: Option<f64>,
    #[arg(long)]
    pub flow_hidden: Option<usize>,
    #[arg(long)]
    pub s_clamp: Option<f64>,
}

impl ModelArgs {
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("d", self.d.map(|v| v.to_string()));
        push("d_action", self.d_action.map(|v| v.to_string()));
        push("k", self.k.map(|v| v.to_string()));
        push("h", self.h.map(|v| v.to_string()));
        push("flow_depth", self.flow_depth.map(|v| v.to_string()));
        push("head_structure", self.structure.clone());
        push("flow", self.flow.clone());
        push("c_width", self.c_width.map(|v| v.to_string()));
        push("flow_hidden", self.flow_hidden.map(|v| v.to_string()));
        push("s_clamp", self.s_clamp.map(|v| v.to_string()));
        out
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// key=value file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// rmsprop or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metrics CSV; printed to stdout when absent.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated first observation; zeros when absent.
    #[arg(long)]
    pub start: Option<String>,
    /// zero or random actions for action-conditioned models.
    #[arg(long, default_value = "zero")]
    pub policy: String,
    /// CSV path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    #[arg(long, default_value_t = 4)]
    pub t: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
}

#[derive(Args, Debug)]
pub struct ParamcountArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub d: usize,
    /// full, diagonal or tied.
    #[arg(long, default_value = "diagonal")]
    pub structure: String,
}

#[derive(Args, Debug)]
pub struct DreamArgs {
    /// World model to use; one is fitted to the synthetic control task when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub popsize: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 60)]
    pub generations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub horizon: usize,
    #[arg(long, default_value_t = 4)]
    pub episodes: usize,
    /// origin (-|y|^2) or tracking (-|y - target_t|^2).
    #[arg(long, default_value = "origin")]
    pub reward: String,
    /// Comma-separated start observation; (2, -2, 2, ...) when absent.
    #[arg(long)]
    pub start: Option<String>,
    /// Reward log CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Invalid>().is_some() {
        return 2;
    }
    match err.downcast_ref::<frmdn_core::Error>() {
        Some(frmdn_core::Error::InvalidParameter(_) | frmdn_core::Error::NonPd(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sample(a) => commands::sample(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Paramcount(a) => commands::paramcount(a),
        Command::Dream(a) => commands::dream(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
