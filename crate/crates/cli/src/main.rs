//! `dkm`: train and evaluate deep kernel machine classifiers from a JSON
//! experiment configuration.

mod commands;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dkm_core::data::ExperimentConfig;

use commands::BaselineMethod;

#[derive(Parser)]
#[command(name = "dkm", version, about = "Deep kernel machine classifiers")]
struct Cli {
    /// Override the seed declared in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for independent per-kernel training runs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration and its data sources without training.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build and persist the embedding ensembles for every source.
    Embed {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a single-kernel model and evaluate it on the test split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one single-kernel model per source, for later fusion.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse pretrained kernel models and fine-tune them end to end.
    FuseTrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a spectral-features + linear-softmax reference baseline.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict labels for new samples from saved model artifacts.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Input file per source, as `path` or `name=path` (CSV).
        #[arg(long, required = true)]
        input: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate a saved model on its configured test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Spectral features of the single declared kernel.
    Decomp,
    /// Spectral features of the unweighted average of all kernels.
    Uniform,
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> dkm_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> dkm_core::Result<()> {
    let quiet = cli.quiet;
    let threads = cli.threads;
    match cli.command {
        Command::Validate { config } => {
            commands::cmd_validate(&load_config(&config, cli.seed)?, quiet)
        }
        Command::Embed { config, out } => {
            commands::cmd_embed(&load_config(&config, cli.seed)?, &out, quiet)
        }
        Command::Train { config, out } => {
            commands::cmd_train(&load_config(&config, cli.seed)?, &out, threads, quiet)
        }
        Command::Pretrain { config, out } => {
            commands::cmd_pretrain(&load_config(&config, cli.seed)?, &out, threads, quiet)
        }
        Command::FuseTrain {
            config,
            pretrained,
            out,
        } => commands::cmd_fuse_train(&load_config(&config, cli.seed)?, &pretrained, &out, quiet),
        Command::Baseline {
            config,
            method,
            out,
        } => {
            let method = match method {
                MethodArg::Decomp => BaselineMethod::Decomp,
                MethodArg::Uniform => BaselineMethod::Uniform,
            };
            commands::cmd_baseline(&load_config(&config, cli.seed)?, method, &out, quiet)
        }
        Command::Predict { model, input, out } => {
            commands::cmd_predict(&model, &input, &out, quiet)
        }
        Command::Eval { model, out } => commands::cmd_eval(&model, &out, quiet),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
