//! Batch front end for the segmentation engine: `segment`, `evaluate` and
//! `fuse`, plus the on-disk formats they share.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vos_core::EncoderMode;

pub mod commands;
pub mod config;
pub mod dataset;
pub mod masks;

/// Exit status: all videos succeeded.
pub const EXIT_OK: u8 = 0;
/// Exit status: at least one video failed.
pub const EXIT_PARTIAL: u8 = 1;
/// Exit status: the invocation itself was invalid.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "vos", version, about = "Memory-based video object segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate first-frame annotations through every video of a dataset.
    Segment(SegmentArgs),
    /// Score predicted masks against ground truth and print a score log.
    Evaluate(EvaluateArgs),
    /// Combine runs per pixel (weighted voting) or per video (best score).
    Fuse(FuseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Dataset root holding JPEGImages/ and Annotations/.
    pub dataset: PathBuf,
    /// Output directory; masks go to <output>/<video>/<frame>.png.
    pub output: PathBuf,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_mem_frames: Option<usize>,
    #[arg(long)]
    pub min_mem_frames: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Comma-separated shorter-side sizes or `native`, e.g. 480,660,800,1000.
    #[arg(long)]
    pub scales: Option<String>,
    /// Add horizontally flipped variants.
    #[arg(long, value_enum)]
    pub flip: Option<Toggle>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `toy` or `analytic`.
    #[arg(long)]
    pub encoder: Option<EncoderMode>,
    /// Comma-separated fusion weight per variant.
    #[arg(long)]
    pub weights: Option<String>,
    /// Videos processed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write <frame>.probs probability sidecars (needed by pixel fusion).
    #[arg(long)]
    pub probs: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted masks: <predictions>/<video>/<frame>.png.
    pub predictions: PathBuf,
    /// Ground truth in the same layout, or a dataset root with Annotations/.
    pub ground_truth: PathBuf,
    /// Run id recorded in the log; defaults to the prediction directory name.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Write the score log here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Output directory.
    pub output: PathBuf,
    /// Run directories produced by `segment`.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Comma-separated weight per run (pixel mode).
    #[arg(long)]
    pub weights: Option<String>,
    /// Pick whole videos from the best-scoring run instead of voting per pixel.
    #[arg(long)]
    pub video_level: bool,
    /// Score logs, one per run in the same order (video-level mode).
    #[arg(long, num_args = 1..)]
    pub logs: Vec<PathBuf>,
}

/// Runs one command and returns its exit status.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Segment(a) => commands::segment(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Fuse(a) => commands::fuse(&a),
    };
    match result {
        Ok(report) => report.finish(),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_PARTIAL
            }
        }
    }
}
