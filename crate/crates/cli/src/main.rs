mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "rfcaug", version, about = "Random frequency component augmentation toolkit")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand a CIFAR-binary dataset with RFC/APR outputs.
    Augment(AugmentArgs),
    /// Train the MLP classifier.
    Train(TrainArgs),
    /// Accuracy on band-limited and phase-only versions of a test set.
    Probe(ProbeArgs),
    /// Max-softmax AUROC of in-distribution vs. OOD sets.
    EvalOod(EvalOodArgs),
    /// Apply one corruption at one severity.
    Corrupt(CorruptArgs),
    /// Dataset summary: class histogram, channel statistics, band energy.
    Stats(StatsArgs),
    /// Rerun a recorded command and check its outputs are byte-identical.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub class_count: usize,
    #[arg(long, default_value_t = 4.0)]
    pub radius: f64,
    /// rfc, apr or rfc+apr
    #[arg(long, default_value = "rfc")]
    pub mode: String,
    /// Stage order for rfc+apr: rfc-first or apr-first.
    #[arg(long, default_value = "rfc-first")]
    pub order: String,
    #[arg(long, default_value_t = 0.5)]
    pub prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for PPM previews of the first augmented images.
    #[arg(long)]
    pub samples_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub sample_count: usize,
    /// Manifest path (default: <output>.manifest).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Test set evaluated after every epoch for the log.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Per-epoch log CSV (default: <output>.log.csv).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub class_count: usize,
    #[arg(long, default_value_t = rfcaug_core::classifier::DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Comma-separated decay epochs (default: 30/60/80/95% of --epochs).
    #[arg(long)]
    pub milestones: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.2)]
    pub decay: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-batch augmentation: none, baseline, rfc, apr or rfc+apr.
    /// The frequency modes run after the baseline crop/flip.
    #[arg(long, default_value = "baseline")]
    pub augment: String,
    #[arg(long, default_value_t = 4.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 0.5)]
    pub prob: f64,
    #[arg(long, default_value = "rfc-first")]
    pub order: String,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Probe accuracy CSV to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub class_count: usize,
    #[arg(long, default_value = "4,8")]
    pub radii: String,
    /// Dataset whose mean amplitude replaces the test set's in phase probes.
    #[arg(long)]
    pub mean_from: Option<PathBuf>,
    /// Unused; accepted so every subcommand takes a seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalOodArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// In-distribution CIFAR-binary test set.
    #[arg(long = "in")]
    pub in_data: Option<PathBuf>,
    /// OOD set as name=path (.npy or CIFAR binary); repeatable.
    #[arg(long)]
    pub ood: Vec<String>,
    /// In-distribution scores (CSV with a `score` column), instead of a model.
    #[arg(long)]
    pub in_scores: Option<PathBuf>,
    /// OOD scores as [name=]path; repeatable.
    #[arg(long)]
    pub ood_scores: Vec<String>,
    /// Combined score CSV (`score,is_in_distribution`); repeatable.
    #[arg(long)]
    pub scores: Vec<PathBuf>,
    /// AUROC report CSV to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Directory receiving `<name>.scores.csv` for each OOD set.
    #[arg(long)]
    pub export_scores: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub class_count: usize,
    /// Unused; accepted so every subcommand takes a seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// gaussian_noise, gaussian_blur, fog or contrast
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub severity: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replacement for the bundled severity constants.
    #[arg(long)]
    pub constants: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub class_count: usize,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Also write the report here (and a manifest next to it).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub class_count: usize,
    /// Low-pass radius for the band energy split.
    #[arg(long, default_value_t = 4.0)]
    pub radius: f64,
    /// Unused; accepted so every subcommand takes a seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    commands::dispatch(cli.command)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
