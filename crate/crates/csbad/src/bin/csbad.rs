use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use csbad::cli::{self, RunOverrides};
use csbad::cluster::CutRule;

#[derive(Parser)]
#[command(
    name = "csbad",
    about = "Desk-scale simulator for clustered stream-based active distillation",
    version
)]
struct Cli {
    /// Experiment config file (JSON)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (falls back to the config's output_dir, then $CSBAD_OUT)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Master seed override
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Suppress non-essential output
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write a run directory
    Simulate,
    /// Cluster a cross-performance matrix CSV into dendrogram + partition
    Cluster {
        /// Matrix CSV file
        matrix: PathBuf,
        /// Dendrogram cut height (inclusive)
        #[arg(long, conflicts_with = "k")]
        threshold: Option<f64>,
        /// Exact number of clusters
        #[arg(long)]
        k: Option<usize>,
    },
    /// Compare SELECT strategies over a budget grid, with margins of error
    SelectBench,
    /// mAP50-95 of a predictions file against a ground-truth file (JSON-lines)
    Metrics {
        predictions: PathBuf,
        ground_truth: PathBuf,
    },
}

fn require_config(config: &Option<PathBuf>) -> Result<&PathBuf, cli::CliError> {
    config.as_ref().ok_or_else(|| cli::CliError::Validation {
        path: "--config".to_string(),
        message: "this command needs a config file".to_string(),
    })
}

fn run(args: Cli) -> Result<(), cli::CliError> {
    let overrides = RunOverrides {
        out: args.out,
        seed: args.seed,
        quiet: args.quiet,
    };
    match args.command {
        Command::Simulate => cmd_with_config(&args.config, |path| {
            cli::cmd_simulate(path, &overrides).map(|_| ())
        }),
        Command::Cluster {
            matrix,
            threshold,
            k,
        } => {
            let cut = match (threshold, k) {
                (Some(t), None) => CutRule::Threshold(t),
                (None, Some(k)) => CutRule::K(k),
                _ => {
                    return Err(cli::CliError::Validation {
                        path: "--threshold/--k".to_string(),
                        message: "pass exactly one of --threshold or --k".to_string(),
                    })
                }
            };
            cli::cmd_cluster(&matrix, cut, &overrides).map(|_| ())
        }
        Command::SelectBench => cmd_with_config(&args.config, |path| {
            cli::cmd_select_bench(path, &overrides).map(|_| ())
        }),
        Command::Metrics {
            predictions,
            ground_truth,
        } => {
            let report = cli::cmd_metrics(&predictions, &ground_truth)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("serializable report")
            );
            Ok(())
        }
    }
}

fn cmd_with_config(
    config: &Option<PathBuf>,
    f: impl FnOnce(&PathBuf) -> Result<(), cli::CliError>,
) -> Result<(), cli::CliError> {
    f(require_config(config)?)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
