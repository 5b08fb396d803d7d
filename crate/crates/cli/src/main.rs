mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seisbert::Error;

/// Masked-trace encoder for seismic shot gathers.
#[derive(Parser, Debug)]
#[command(name = "seisbert", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic dataset (SSDS).
    Generate(GenerateArgs),
    /// Masked-trace pre-training; continues an interrupted run in the same output_dir.
    Pretrain(PretrainArgs),
    /// Fine-tune a checkpoint on a downstream task.
    Finetune(FinetuneArgs),
    /// Run a checkpoint over a dataset and write its predictions.
    Infer(InferArgs),
    /// Export attention maps and rollouts for one gather.
    Analyze(AnalyzeArgs),
    /// Normal-moveout correct a dataset with RMS velocities.
    Nmo(NmoArgs),
    /// Pre-train and fine-tune at several field-proxy fractions.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// desk, snist or field.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the preset's trace count.
    #[arg(long)]
    pub traces: Option<usize>,
    /// Share of field-proxy gathers; the rest are clean.
    #[arg(long, default_value_t = 0.0)]
    pub field_fraction: f64,
    /// Id of the first gather, to draw disjoint datasets from one seed.
    #[arg(long, default_value_t = 0)]
    pub first_id: u64,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Ignore checkpoints already in output_dir and start over.
    #[arg(long)]
    pub restart: bool,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// denoise, velocity, firstbreak or vrms; overrides the config.
    #[arg(long)]
    pub task: Option<String>,
    /// Pre-trained checkpoint.
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub freeze_k: Option<usize>,
    #[arg(long)]
    pub restart: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Velocity scaling; defaults to the bounds stored in the dataset.
    #[arg(long)]
    pub v_min: Option<f64>,
    #[arg(long)]
    pub v_max: Option<f64>,
    /// Minimum probability for a first-break pick.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Gather to analyze.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Also export the attention rollout.
    #[arg(long)]
    pub rollout: bool,
    /// Roll out without the identity term.
    #[arg(long)]
    pub raw: bool,
    /// Second checkpoint whose rollout is compared layer by layer.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NmoArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// CSV from `infer` on a vrms model; defaults to the dataset's own labels.
    #[arg(long)]
    pub vrms: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub stretch_mute: f64,
    #[arg(long, default_value_t = 1.0)]
    pub offset_fraction: f64,
    /// Drop traces beyond the corrected offsets instead of keeping them.
    #[arg(long)]
    pub exclude: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// Exit status by failure class.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Finetune(a) => commands::finetune(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Nmo(a) => commands::nmo(&a),
        Command::Sweep(a) => commands::sweep(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
