//! `crossview`: synthesize data, train, evaluate, lay out figures and run
//! nearest-neighbor retrieval from the command line.
//!
//! Exit codes: 0 on success, 2 for usage errors (bad flags, missing inputs,
//! invalid sizes), 1 for failures while running.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crossview::data::Split;
use crossview::model::Direction;

#[derive(Debug, Parser)]
#[command(name = "crossview", version, about = "Cross-view conditional GAN image synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a deterministic synthetic paired-scene dataset.
    SynthData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image side length: 64 or 256.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "train", value_parser = parse_split)]
        split: Split,
    },
    /// Train from a JSON config, streaming one JSON line per epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Training manifest directory; overrides `train_manifest` in the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Held-out manifest directory; overrides `eval_manifest` in the config.
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
        /// Run directory; overrides `out_dir` in the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate from a checkpoint (or read generated images) and compute every metric.
    Evaluate {
        #[arg(long, conflicts_with_all = ["generated", "ground_truth"])]
        checkpoint: Option<PathBuf>,
        /// Directory written by a previous generation run.
        #[arg(long, conflicts_with = "ground_truth")]
        generated: Option<PathBuf>,
        /// Score the real targets against themselves.
        #[arg(long)]
        ground_truth: bool,
        /// Held-out manifest directory with the real targets.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Manifest the scene classifier is trained on; defaults to `--manifest`.
        #[arg(long)]
        classifier_manifest: Option<PathBuf>,
        /// Direction for `--ground-truth`; otherwise taken from the checkpoint or generated set.
        #[arg(long, value_parser = parse_direction)]
        direction: Option<Direction>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Lay out images in labeled columns: input | ground truth | methods.
    Grid {
        /// Columns as `[LABEL=]PATH`. Directories give one row per PNG in the
        /// first directory; plain files give a single row.
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Only these ids (file stems), in this order.
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<String>>,
    },
    /// Nearest training images to each generated output under L1.
    Knn {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Held-out manifest directory whose inputs are translated.
        #[arg(long)]
        manifest: PathBuf,
        /// Training manifest directory; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        train_manifest: Option<PathBuf>,
        #[arg(long, default_value_t = crossview::retrieval::DEFAULT_K)]
        k: usize,
        /// Box-downsample both sides by this factor before comparing.
        #[arg(long, default_value_t = 1)]
        downsample: usize,
        #[arg(long)]
        out: PathBuf,
        /// Number of queries shown in the montage.
        #[arg(long, default_value_t = 8)]
        montage_rows: usize,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: crossview::Error| e.to_string())
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: crossview::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.code())
        }
    }
}
