mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use help_core::metalearn::Variant;

use commands::{
    AblationOverrides, DataPaths, EvalOverrides, GenOverrides, SearchOverrides, TrainOverrides,
};
use config::ExperimentConfig;
use error::CliError;

/// Few-shot, hardware-adaptive latency prediction for architecture search.
#[derive(Parser)]
#[command(name = "help-lat", version)]
struct Cli {
    /// TOML experiment configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: config `out_dir`, then $HELP_LAT_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives bit-identical reruns.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Device pool JSON (default: <out>/pool.json).
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Latency table, CSV or JSON lines (default: <out>/latency.csv).
    #[arg(long)]
    table: Option<PathBuf>,
}

impl From<DataArgs> for DataPaths {
    fn from(a: DataArgs) -> Self {
        DataPaths {
            pool: a.pool,
            table: a.table,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic device pool and its latency table.
    GenDevices {
        #[arg(long)]
        devices: Option<usize>,
        /// Measured architectures per device.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Meta-train the predictor on the meta-train devices.
    Metatrain {
        #[command(flatten)]
        data: DataArgs,
        /// Outer iterations.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from <out>/checkpoint if it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Adapt a checkpoint to devices with a few samples and score it.
    AdaptEval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated device ids (default: held-out devices).
        #[arg(long, value_delimiter = ',')]
        devices: Option<Vec<String>>,
        /// Comma-separated support sizes.
        #[arg(long, value_delimiter = ',')]
        samples: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Any of flops, layerwise, scratch.
        #[arg(long, value_delimiter = ',')]
        baselines: Option<Vec<String>>,
    },
    /// Latency-constrained search on one device.
    Search {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        device: Option<String>,
        /// Comma-separated constraints in ms (default: latency percentiles).
        #[arg(long, value_delimiter = ',')]
        constraints: Option<Vec<f64>>,
        /// JSON-lines accuracy table (default: synthetic accuracies).
        #[arg(long)]
        accuracy: Option<PathBuf>,
        /// Search with the device's true latency instead of a predictor.
        #[arg(long)]
        oracle_latency: bool,
        /// Support samples for adapting the predictor.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write (latency, accuracy) series for plotting.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Train and score the four variants of the ablation tower.
    Ablation {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    let out = cfg.resolve_out_dir(cli.out.as_deref());
    match cli.command {
        Command::GenDevices {
            devices,
            samples,
            seed,
        } => commands::gen_devices(
            &mut cfg,
            &out,
            &GenOverrides {
                devices,
                samples,
                seed,
            },
        ),
        Command::Metatrain {
            data,
            episodes,
            variant,
            seed,
            resume,
        } => commands::metatrain(
            &mut cfg,
            &out,
            &data.into(),
            &TrainOverrides {
                episodes,
                workers: cli.workers,
                variant,
                seed,
                resume,
            },
        ),
        Command::AdaptEval {
            data,
            checkpoint,
            devices,
            samples,
            seeds,
            baselines,
        } => commands::adapt_eval(
            &mut cfg,
            &out,
            &data.into(),
            &EvalOverrides {
                checkpoint,
                devices,
                samples,
                seeds,
                baselines,
                workers: cli.workers,
            },
        )
        .map(|_| ()),
        Command::Search {
            data,
            checkpoint,
            device,
            constraints,
            accuracy,
            oracle_latency,
            samples,
            seed,
            emit_plot_data,
        } => commands::search(
            &mut cfg,
            &out,
            &data.into(),
            &SearchOverrides {
                checkpoint,
                device,
                constraints,
                accuracy,
                oracle: oracle_latency,
                samples,
                seed,
                emit_plot_data,
            },
        )
        .map(|_| ()),
        Command::Ablation {
            data,
            episodes,
            variants,
        } => commands::ablation(
            &mut cfg,
            &out,
            &data.into(),
            &AblationOverrides { episodes, variants },
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("help-lat: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
