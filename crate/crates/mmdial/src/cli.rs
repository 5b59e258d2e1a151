//! Argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mmdial_core::evalharness::{Task, DEFAULT_CANDIDATES};
use mmdial_core::Split;

#[derive(Debug, Parser)]
#[command(name = "mmdial", version, about = "Build, calibrate and evaluate image-mixed dialogue datasets")]
pub struct Cli {
    /// Print a machine-readable JSON summary on stdout instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replace candidate sentences with their top-k images.
    Build(BuildArgs),
    /// Draw the similarity-segmented annotation sample.
    Sample(SampleArgs),
    /// Derive per-combination thresholds from annotation scores.
    Calibrate(CalibrateArgs),
    /// Keep instances whose similarity exceeds their threshold.
    Filter(FilterArgs),
    /// Per-split dataset statistics.
    Stats(StatsArgs),
    /// Run the tf-idf retrieval baseline.
    Eval(EvalArgs),
    /// Serve a sample to annotators over HTTP.
    Serve(ServeArgs),
}

/// `key=path`.
pub fn key_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((k, p)) if !k.is_empty() && !p.is_empty() => Ok((k.to_owned(), PathBuf::from(p))),
        _ => Err(format!("expected <name>=<path>, got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Dialogue corpus, `source=path` (repeatable).
    #[arg(long = "dialogues", value_parser = key_path, required = true)]
    pub dialogues: Vec<(String, PathBuf)>,
    /// Caption collection, `source=path` (repeatable).
    #[arg(long = "images", value_parser = key_path, required = true)]
    pub images: Vec<(String, PathBuf)>,
    /// Embedding file, `image=path` or `sentence=path` (repeatable).
    #[arg(long = "embeddings", value_parser = key_path, required = true)]
    pub embeddings: Vec<(String, PathBuf)>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    pub topk: u32,
    /// Minimum similarity for a match to count.
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub floor: f64,
    /// Stop-word file replacing the bundled list.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Sampled instances, in combination then segment order.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the segment boundaries and sampled ids.
    #[arg(long)]
    pub segments: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the Spearman correlation report.
    #[arg(long)]
    pub correlations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub instances: PathBuf,
    /// Threshold report, or `reference` for the published per-combination values.
    #[arg(long)]
    pub thresholds: Option<String>,
    /// Threshold for combinations the report does not cover.
    #[arg(long, allow_hyphen_values = true)]
    pub default_threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub instances: PathBuf,
    /// Source corpora for exact dialogue lengths, `source=path` (repeatable).
    #[arg(long = "dialogues", value_parser = key_path)]
    pub dialogues: Vec<(String, PathBuf)>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub instances: PathBuf,
    /// Caption collections, `source=path` (repeatable).
    #[arg(long = "images", value_parser = key_path, required = true)]
    pub images: Vec<(String, PathBuf)>,
    #[arg(long)]
    pub task: Task,
    #[arg(long, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    pub candidates: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-example ranks and top five candidates.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Sampled instances to serve, in order.
    #[arg(long)]
    pub sample: PathBuf,
    /// Append-only answer log; replayed when it exists.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Built UI assets served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}
