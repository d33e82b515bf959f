//! `hypergen`: train a weight generator, evaluate checkpoints, export
//! generated CNNs and attention maps, and run the analytic oracle suites.
//!
//! Every command is a pure function of its flags and seeds. Exit codes:
//! 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use hypergen_cli::commands;
use hypergen_cli::error::CliError;

#[derive(Parser)]
#[command(
    name = "hypergen",
    version,
    about = "Few-shot weight generation: a transformer reads a support set and writes a CNN"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run meta-training as described by a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint instead of initializing fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset; prints a JSON report.
    ///
    /// The dataset is used as one undivided class pool, so point this at
    /// held-out data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the k the checkpoint was trained with.
        #[arg(long)]
        k_shot: Option<usize>,
        #[arg(long, default_value_t = 15)]
        q_query: usize,
        #[arg(long, default_value_t = 0)]
        u_unlabeled: usize,
    },
    /// Generate a CNN from one support set and export it, tagged per layer
    /// as generated or learned, with support batch-norm statistics.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Pool to sample the support set from (with --episode-seed).
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, default_value_t = 0)]
        episode_seed: u64,
        /// Directory of class subdirectories of PNGs; overrides --dataset.
        /// Each class contributes the smallest common sample count.
        #[arg(long)]
        support_dir: Option<PathBuf>,
        /// Defaults to the k the checkpoint was trained with.
        #[arg(long)]
        k_shot: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the attention maps of one generation pass, annotated with
    /// what every token is.
    InspectAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 0)]
        episode_seed: u64,
        /// Defaults to the k the checkpoint was trained with.
        #[arg(long)]
        k_shot: Option<usize>,
        #[arg(long, default_value_t = 0)]
        u_unlabeled: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run analytic oracle suites; prints a JSON report and fails (exit 3)
    /// if any property fails.
    OracleCheck {
        /// logits | attention | semi | tracking | all
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Generate weights for many episodes and export them as one matrix
    /// (episodes x flattened generated parameters) plus a class-map sidecar.
    ExportWeightEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the k the checkpoint was trained with.
        #[arg(long)]
        k_shot: Option<usize>,
        /// 'all' or a single CNN layer index.
        #[arg(long, default_value = "all")]
        layers: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Parse and validate a run config, printing its canonical form.
    CheckConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Validates HYPERGEN_THREADS. This build executes episodes sequentially, so
/// the cap is accepted and checked but does not add workers.
fn thread_cap() -> Result<usize, CliError> {
    match std::env::var("HYPERGEN_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(CliError::config(format!("HYPERGEN_THREADS: {}", e))),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::config(format!(
                "HYPERGEN_THREADS must be a positive integer, got {:?}",
                v
            ))),
        },
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    thread_cap()?;
    match cli.command {
        Command::Train { config, resume } => commands::cmd_train(&config, resume.as_deref()),
        Command::Eval {
            checkpoint,
            dataset,
            episodes,
            seed,
            k_shot,
            q_query,
            u_unlabeled,
        } => commands::cmd_eval(
            &checkpoint,
            &dataset,
            episodes,
            seed,
            k_shot,
            q_query,
            u_unlabeled,
        ),
        Command::Generate {
            checkpoint,
            dataset,
            episode_seed,
            support_dir,
            k_shot,
            out,
        } => commands::cmd_generate(
            &checkpoint,
            dataset.as_deref(),
            episode_seed,
            support_dir.as_deref(),
            k_shot,
            &out,
        ),
        Command::InspectAttention {
            checkpoint,
            dataset,
            episode_seed,
            k_shot,
            u_unlabeled,
            out_dir,
        } => commands::cmd_inspect_attention(
            &checkpoint,
            &dataset,
            episode_seed,
            k_shot,
            u_unlabeled,
            &out_dir,
        ),
        Command::OracleCheck { suite } => commands::cmd_oracle_check(&suite),
        Command::ExportWeightEmbeddings {
            checkpoint,
            dataset,
            episodes,
            seed,
            k_shot,
            layers,
            out_dir,
        } => commands::cmd_export_weight_embeddings(
            &checkpoint,
            &dataset,
            episodes,
            seed,
            k_shot,
            &layers,
            &out_dir,
        ),
        Command::CheckConfig { config } => commands::cmd_check_config(&config),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e);
        std::process::exit(e.exit_code());
    }
}
