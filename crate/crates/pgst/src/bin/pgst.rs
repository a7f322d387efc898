//! `pgst`: graph scattering transforms with energy-ratio pruning.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pgst::cli::{self, ConfigFlags, RunConfig};

#[derive(Parser)]
#[command(
    name = "pgst",
    about = "Graph scattering transforms with energy-ratio pruning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the (pruned) scattering transform over a graph and its signals
    Transform {
        /// Edge list (TSV: u v [w]; '#' comments)
        #[arg(long)]
        graph: PathBuf,
        /// Signal matrix CSV (one row per node, one column per signal)
        #[arg(long)]
        signals: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Fit a consensus tree over a dataset directory
    Fit {
        /// Directory of NAME.graph / NAME.signals.csv pairs
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Stability experiment: measured feature distances vs theoretical bounds
    Stability {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        signals: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Paired random-vs-localized sensitivity comparison
    Sensitivity {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        signals: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Runtime comparison of the full and pruned transforms
    Bench {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        signals: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Nearest-centroid smoke classifier on feature CSVs
    Classify {
        #[arg(long)]
        train: PathBuf,
        #[arg(long = "train-labels")]
        train_labels: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long = "test-labels")]
        test_labels: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
}

fn run() -> Result<(), cli::CliError> {
    let parsed = Cli::parse();
    match parsed.command {
        Command::Transform {
            graph,
            signals,
            flags,
        } => {
            let cfg = RunConfig::resolve(&flags)?;
            cli::cmd_transform(&graph, &signals, &cfg)
        }
        Command::Fit { data, flags } => {
            let cfg = RunConfig::resolve(&flags)?;
            cli::cmd_fit(&data, &cfg)
        }
        Command::Stability {
            graph,
            signals,
            flags,
        } => {
            let cfg = RunConfig::resolve(&flags)?;
            cli::cmd_stability(&graph, &signals, &cfg)
        }
        Command::Sensitivity {
            graph,
            signals,
            flags,
        } => {
            let cfg = RunConfig::resolve(&flags)?;
            cli::cmd_sensitivity(&graph, &signals, &cfg)
        }
        Command::Bench {
            graph,
            signals,
            flags,
        } => {
            let cfg = RunConfig::resolve(&flags)?;
            cli::cmd_bench(&graph, &signals, &cfg)
        }
        Command::Classify {
            train,
            train_labels,
            test,
            test_labels,
            flags,
        } => {
            let cfg = RunConfig::resolve(&flags)?;
            let accuracy =
                cli::cmd_classify_smoke(&train, &train_labels, &test, &test_labels, &cfg)?;
            println!("accuracy {accuracy}");
            Ok(())
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
