//! `fededge`: feature extraction, VAE pretraining (central or federated),
//! classifier fine-tuning, SHAP explanations and kernel pruning for
//! network traffic classification.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use commands::Ctx;

#[derive(Parser)]
#[command(
    name = "fededge",
    version,
    about = "Semi-supervised federated traffic classification"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set vae.num_epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed for every randomized stage; overrides the config.
    #[arg(long, env = "FEDEDGE_SEED", global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a normalized feature matrix from a packet log or flow CSVs.
    Extract {
        #[arg(long)]
        packets: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        label_column: Option<String>,
        /// Apply saved normalization stats instead of fitting new ones.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, default_value = "fam")]
        name: String,
    },
    /// Train the VAE on unlabeled feature matrices.
    Pretrain {
        #[arg(long, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long, default_value = "vae")]
        name: String,
    },
    /// Train the VAE with federated averaging, one client per shard.
    Federate {
        #[arg(long = "shard", num_args = 1..)]
        shards: Vec<PathBuf>,
        /// Run as a client of the server at this address.
        #[arg(long, value_name = "ADDR")]
        join: Option<String>,
        #[arg(long, requires = "join")]
        client_id: Option<String>,
        #[arg(long, default_value = "global_vae")]
        name: String,
    },
    /// Fine-tune the classifier on labeled data and evaluate it.
    Finetune {
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        labeled: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "classifier")]
        name: String,
    },
    /// Compare the pretrained classifier with a plain CNN across labeled ratios.
    Sweep {
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        labeled: Option<PathBuf>,
    },
    /// Explain classifier predictions with Shapley values.
    Explain {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        background: Option<PathBuf>,
    },
    /// Prune convolution kernels by importance and report the trade-off.
    Prune {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Evaluate a classifier on a labeled feature matrix.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "evaluation")]
        name: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Extract { .. } => "extract",
            Command::Pretrain { .. } => "pretrain",
            Command::Federate { .. } => "federate",
            Command::Finetune { .. } => "finetune",
            Command::Sweep { .. } => "sweep",
            Command::Explain { .. } => "explain",
            Command::Prune { .. } => "prune",
            Command::Evaluate { .. } => "evaluate",
        }
    }
}

fn run(cli: Cli) -> fededge::Result<()> {
    let mut overrides = cli.overrides;
    if let Some(out) = &cli.out {
        overrides.push(format!(
            "output_dir={}",
            toml::Value::String(out.display().to_string())
        ));
    }
    let resolved = config::load(cli.config.as_deref(), &overrides, cli.seed)?;
    let ctx = Ctx::new(resolved, cli.command.name())?;
    match cli.command {
        Command::Extract {
            packets,
            csv,
            label_column,
            stats,
            name,
        } => commands::extract(
            &ctx,
            commands::ExtractArgs {
                packets,
                csv,
                label_column,
                stats,
                name,
            },
        ),
        Command::Pretrain { data, name } => commands::pretrain(&ctx, data, &name),
        Command::Federate {
            shards,
            join,
            client_id,
            name,
        } => commands::federate(
            &ctx,
            commands::FederateArgs {
                shards,
                join,
                client_id,
                name,
            },
        ),
        Command::Finetune {
            vae,
            labeled,
            test,
            name,
        } => commands::finetune(
            &ctx,
            commands::FinetuneArgs {
                vae,
                labeled,
                test,
                name,
            },
        ),
        Command::Sweep { vae, labeled } => commands::sweep(&ctx, vae, labeled),
        Command::Explain {
            model,
            data,
            background,
        } => commands::explain(&ctx, model, data, background),
        Command::Prune {
            model,
            validation,
            test,
        } => commands::prune_cmd(&ctx, model, validation, test),
        Command::Evaluate { model, test, name } => commands::evaluate_cmd(&ctx, model, test, &name),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
