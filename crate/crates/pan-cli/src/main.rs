//! `pan`: human-centric visual token graphs for action recognition.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pan_cli::commands::{self, sample::SampleArgs};
use pan_cli::config::{config_keys_help, RunConfig};
use pan_cli::error::{CliError, Result};
use pan_core::synth::Split;

#[derive(Parser)]
#[command(
    name = "pan",
    about = "Human-centric visual token graphs: synthetic benchmark, training, and ablations",
    after_help = config_keys_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_kv(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        other => Err(format!("split must be train or val, got {other:?}")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset to disk
    Generate {
        /// Config file (key=value lines); defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Override single config keys (repeatable)
        #[arg(long = "set", value_parser = parse_kv)]
        set: Vec<(String, String)>,
    },
    /// Sample tokens from a grid file (guided needs a 2D skeleton file)
    Sample {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        skeleton: Option<PathBuf>,
        /// guided | even
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
        /// Patch size in pixels
        #[arg(long, default_value_t = 14)]
        patch: usize,
        #[arg(long)]
        img_h: Option<usize>,
        #[arg(long)]
        img_w: Option<usize>,
        /// Person slots for even sampling
        #[arg(long, default_value_t = 1)]
        persons: usize,
        /// Tokens per person for even sampling
        #[arg(long)]
        joints: Option<usize>,
        /// linear | nearest
        #[arg(long, default_value = "linear")]
        interp: String,
    },
    /// Train a model on a generated dataset
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory produced by `pan generate`
        #[arg(long)]
        data: PathBuf,
        /// Run output directory (metrics, log, checkpoint)
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_parser = parse_kv)]
        set: Vec<(String, String)>,
    },
    /// Evaluate a checkpoint on a dataset split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train | val
        #[arg(long, value_parser = parse_split, default_value = "val")]
        split: Split,
        /// Confusion CSV destination (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter's gradient (f64)
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Elements checked per parameter (stride-sampled beyond this)
        #[arg(long, default_value_t = 8)]
        max_elements: usize,
        #[arg(long = "set", value_parser = parse_kv)]
        set: Vec<(String, String)>,
    },
    /// Print the exact learnable-parameter count and per-module breakdown
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_parser = parse_kv)]
        set: Vec<(String, String)>,
    },
    /// Train the ablation grid (variants x sampling x seeds) and compare
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_parser = parse_kv)]
        set: Vec<(String, String)>,
    },
    /// Dump post-softmax attention maps for one sample as a tensor file
    Attnmaps {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Sample id from the dataset manifest (e.g. s00012)
        #[arg(long)]
        sample: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>, set: &[(String, String)]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::io(format!("reading config {}: {e}", p.display())))?,
        None => String::new(),
    };
    RunConfig::parse(&text, set)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, set } => {
            let cfg = load_config(&config, &set)?;
            commands::generate::run(&cfg, &out)
        }
        Command::Sample {
            grid,
            skeleton,
            strategy,
            out,
            patch,
            img_h,
            img_w,
            persons,
            joints,
            interp,
        } => commands::sample::run(&SampleArgs {
            grid,
            skeleton,
            strategy,
            out,
            patch,
            img_h,
            img_w,
            persons,
            joints,
            interp,
        }),
        Command::Train {
            config,
            data,
            out,
            set,
        } => {
            let cfg = load_config(&config, &set)?;
            commands::train::run(&cfg, &data, &out)
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => commands::eval::run(&checkpoint, &data, split, out.as_deref()),
        Command::Gradcheck {
            config,
            eps,
            tolerance,
            max_elements,
            set,
        } => {
            let cfg = load_config(&config, &set)?;
            commands::gradcheck::run(&cfg, eps, tolerance, max_elements)
        }
        Command::Params { config, set } => {
            let cfg = load_config(&config, &set)?;
            commands::params::run(&cfg)
        }
        Command::Ablate {
            config,
            data,
            out,
            set,
        } => {
            let cfg = load_config(&config, &set)?;
            commands::ablate::run(&cfg, &data, &out)
        }
        Command::Attnmaps {
            checkpoint,
            data,
            sample,
            out,
        } => commands::attnmaps::run(&checkpoint, &data, &sample, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
