//! `mlcmkd`: reproducible cross-modal distillation experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
//! 4 numeric divergence (non-finite loss).

mod commands;

use clap::{Parser, Subcommand};
use mlcmkd_core::Error;

#[derive(Parser)]
#[command(name = "mlcmkd", version, about = "cross-modal knowledge distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired RGB/thermal dataset (train + val splits) on disk.
    GenData {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: String,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one stage (teacher_pretrain | supervised_thermal | ktl | mcl).
    Train {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        data: String,
        /// inter_ocular | bbox_diag | all
        #[arg(long, default_value = "inter_ocular")]
        norm: String,
        #[arg(long)]
        out: String,
    },
    /// Run an ablation matrix: arms x seeds, shared data and teacher.
    Ablate {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: String,
        /// Comma-separated arm list (default from the config).
        #[arg(long)]
        arms: Option<String>,
        /// Comma-separated seed list (default from the config).
        #[arg(long)]
        seeds: Option<String>,
        /// Worker processes to run arms in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Recompute gradient-norm stability tables for an ablation directory.
    Stability {
        #[arg(long)]
        out: String,
        /// Override the window length (steps).
        #[arg(long)]
        window: Option<usize>,
    },
    /// Re-render the combined comparison tables for an ablation directory.
    Report {
        #[arg(long)]
        out: String,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Contract(_) => 2,
        Error::NonFinite(_) => 4,
        Error::Shape { .. } => 2,
        Error::Io(_) | Error::Format(_) | Error::Corruption(_) | Error::Json(_) => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { config, out, seed } => commands::gen_data(&config, &out, seed),
        Command::Train { config, out, seed } => commands::train(&config, &out, seed),
        Command::Eval { checkpoint, data, norm, out } => {
            commands::eval(&checkpoint, &data, &norm, &out)
        }
        Command::Ablate { config, out, arms, seeds, jobs } => {
            commands::ablate(&config, &out, arms.as_deref(), seeds.as_deref(), jobs)
        }
        Command::Stability { out, window } => commands::stability(&out, window),
        Command::Report { out } => commands::report(&out),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
