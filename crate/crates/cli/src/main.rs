//! `speechknn`: build and maintain label datastores, assess samples and
//! evaluate the retrieval scorer from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::InferenceArgs;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (feature file v1, snapshot v1)");

#[derive(Parser)]
#[command(name = "speechknn", version = VERSION, about = "Retrieval-based speech symptom assessment")]
struct Cli {
    /// TOML file with defaults for any flag; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Root seed for k-means (default 17).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct Data {
    /// Sample manifest (JSON lines).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory of datastore snapshots.
    #[arg(long)]
    store_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build datastore snapshots from a manifest split.
    Build {
        #[command(flatten)]
        data: Data,
        /// Only this layer (default: the configured layers).
        #[arg(long)]
        layer: Option<u32>,
        /// Only this channel (default: both).
        #[arg(long)]
        channel: Option<speechknn_core::Channel>,
        /// train, validation, test or all.
        #[arg(long, default_value = "train")]
        split: commands::SplitFilter,
        #[command(flatten)]
        inference: InferenceArgs,
    },
    /// Add samples to every snapshot in the store directory.
    Add {
        #[command(flatten)]
        data: Data,
        /// Sample ids to add (default: every sample in --split).
        #[arg(long = "id")]
        ids: Vec<String>,
        #[arg(long, default_value = "train")]
        split: commands::SplitFilter,
    },
    /// Remove samples from every snapshot in the store directory.
    Remove {
        #[command(flatten)]
        data: Data,
        #[arg(long = "id", required = true)]
        ids: Vec<String>,
    },
    /// One line per snapshot: size, dimension, label counts.
    Stats {
        #[command(flatten)]
        data: Data,
    },
    /// Score candidate segment counts by mean silhouette; CSV output.
    SelectN {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        layer: u32,
        #[arg(long, default_value = "original")]
        channel: speechknn_core::Channel,
        #[arg(long, default_value = "train")]
        split: commands::SplitFilter,
        /// Comma-separated candidates (default: 2 up to min(100, shortest sequence)).
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<usize>>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assess samples; JSON lines output.
    Assess {
        #[command(flatten)]
        data: Data,
        #[arg(long, default_value = "test")]
        split: commands::SplitFilter,
        /// Only these sample ids.
        #[arg(long = "id")]
        ids: Vec<String>,
        /// Include retrieved neighbours per path.
        #[arg(long)]
        provenance: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        inference: InferenceArgs,
    },
    /// Assess a split and compute ROC AUC, sensitivity and specificity.
    Evaluate {
        #[command(flatten)]
        data: Data,
        #[arg(long, default_value = "test")]
        split: commands::SplitFilter,
        /// Write report.json, scores.csv, roc.csv and histograms here.
        #[arg(long)]
        report_dir: Option<PathBuf>,
        #[command(flatten)]
        inference: InferenceArgs,
    },
    /// Evaluate the configuration with one setting varied at a time.
    Ablate {
        #[command(flatten)]
        data: Data,
        #[arg(long, default_value = "test")]
        split: commands::SplitFilter,
        /// Comma-separated subset of paths, refinement, layers.
        #[arg(long, value_delimiter = ',', default_value = "paths,refinement,layers")]
        axes: Vec<speechknn_core::evaluation::AblationAxis>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        inference: InferenceArgs,
    },
    /// Rebuild an evaluation report from saved `assess` output.
    Report {
        /// Manifest providing ground-truth labels.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// JSON lines written by `assess`.
        #[arg(long)]
        assessments: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        report_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
