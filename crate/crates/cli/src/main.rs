//! `blockforge`: train, evaluate, stress-test and visualize assembly policies.

mod commands;
mod manifest;
mod render;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Errors the user can fix by changing the invocation. Exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "blockforge", version, about = "Blueprint-free block assembly")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a successor-feature policy on a task directory.
    Train(TrainArgs),
    /// Greedy rollout of a checkpoint on every task.
    Eval(EvalArgs),
    /// Closed-loop success under placement noise.
    NoiseSweep(SweepArgs),
    /// Per-step panels of the state, action, task channels and predicted Ψ.
    RenderPsi(RenderArgs),
}

#[derive(Args, Debug, Clone)]
pub struct TaskArgs {
    /// Directory of task files.
    #[arg(long, default_value = "tasks")]
    pub tasks: PathBuf,
    /// Comma-separated task ids to keep.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    /// Friction coefficient applied to every task.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Shifts per mating face (odd).
    #[arg(long)]
    pub shifts: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.2)]
    pub epsilon_start: f64,
    #[arg(long, default_value_t = 0.02)]
    pub epsilon_end: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature image resolution.
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 2.0)]
    pub sigma_px: f64,
    #[arg(long, default_value_t = 0.001)]
    pub reward_c: f64,
    /// Channel width of the first network level.
    #[arg(long, default_value_t = 16)]
    pub base_width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Expected feature resolution; a checkpoint trained at another one is rejected.
    #[arg(long)]
    pub d: Option<usize>,
    /// Write one SVG per task (requires --out).
    #[arg(long)]
    pub render: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub d: Option<usize>,
    /// Positional noise levels in block sizes, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "0.02")]
    pub noise_sigma: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub d: Option<usize>,
    /// Task id to render.
    #[arg(long)]
    pub task: String,
    /// Starting assembly: a JSON list of {shape_id, x, z, theta}.
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Stop after this many steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("BLOCKFORGE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| UsageError(format!("BLOCKFORGE_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let res = init_threads().and_then(|_| match &cli.command {
        Cmd::Train(a) => commands::train(a),
        Cmd::Eval(a) => commands::eval(a),
        Cmd::NoiseSweep(a) => commands::noise_sweep(a),
        Cmd::RenderPsi(a) => commands::render_psi(a),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
