use clap::{Parser, Subcommand};
use gistnet_cli::commands::{cmd_eval, cmd_experiments, cmd_gen_data, cmd_gradcheck, cmd_train};
use gistnet_cli::config::RunConfig;
use gistnet_cli::CliResult;
use std::path::PathBuf;
use std::process::ExitCode;

/// Dual-stream (fovea + periphery) scene-context recognition experiments:
/// synthetic data generation, training, evaluation, and analysis.
#[derive(Parser)]
#[command(name = "gistnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset to PPM images plus JSON manifests.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path config overrides, e.g. --train.seed=7
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Train the configured model; writes checkpoints and a CSV log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint; optionally compare against a baseline.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fovea-only baseline checkpoint for per-category deltas.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Load checkpoints whose config digest does not match.
        #[arg(long)]
        force: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Ratio curve, blur sweep, t-SNE, linear probes, and saliency maps.
    Experiments {
        #[arg(long)]
        config: PathBuf,
        /// Trained fused-model checkpoint.
        #[arg(long)]
        gistnet: PathBuf,
        /// Trained fovea-only baseline checkpoint.
        #[arg(long)]
        fovea: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Finite-difference gradient verification (float64).
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn run() -> CliResult<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config, overrides } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            cmd_gen_data(&cfg)
        }
        Command::Train { config, overrides } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            cmd_train(&cfg).map(|_| ())
        }
        Command::Eval {
            config,
            checkpoint,
            baseline,
            force,
            overrides,
        } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            cmd_eval(&cfg, &checkpoint, baseline.as_deref(), force)
        }
        Command::Experiments {
            config,
            gistnet,
            fovea,
            force,
            overrides,
        } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            cmd_experiments(&cfg, &gistnet, &fovea, force)
        }
        Command::Gradcheck { config, overrides } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            cmd_gradcheck(&cfg).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
