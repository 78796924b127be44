//! `truthlens`: classify face images and evaluate the detector on manifests.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{BackendChoice, RunMode};

/// Training-free deepfake detection through visual question answering.
///
/// Exit codes: 0 success, 1 I/O or integrity failure, 2 configuration or
/// input error, 3 gateway or verdict parse error, 4 failure threshold exceeded.
#[derive(Debug, Parser)]
#[command(name = "truthlens", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<RunMode>,
    /// Directory for reports (default `truthlens-out`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Serve every model call from a recorded cache directory; no network.
    #[arg(long, global = true, value_name = "DIR")]
    pub replay: Option<PathBuf>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print exactly one JSON document on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, global = true)]
    pub verbose: bool,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendChoice>,
    /// JSON script of fixtures and rules for the mock backend.
    #[arg(long, global = true, value_name = "PATH")]
    pub mock_script: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Prompt set file replacing the built-in nine prompts.
    #[arg(long, global = true, value_name = "PATH")]
    pub prompts: Option<PathBuf>,
    /// Record failed prompts as empty answers instead of failing the sample.
    #[arg(long, global = true)]
    pub skip_failed_prompts: bool,
    #[arg(long, global = true)]
    pub failure_threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify one image and print the verdict.
    Classify {
        image: PathBuf,
        /// Write the full detection record as JSON.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Evaluate a manifest and write report.json, samples.csv, roc.csv, records.jsonl.
    Eval { manifest: PathBuf },
    /// Per-category ablation over a manifest; writes ablation.csv.
    Ablate { manifest: PathBuf },
    /// Response cache maintenance.
    Cache {
        #[command(subcommand)]
        command: CacheCommand,
    },
    /// Dataset manifest tools.
    Manifest {
        #[command(subcommand)]
        command: ManifestCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum CacheCommand {
    /// Recompute every entry's key and report mismatches.
    Verify {
        /// Cache directory (defaults to the configured cache_dir).
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ManifestCommand {
    /// Build a manifest from a real and a fake image directory.
    Scan {
        #[arg(long, value_name = "DIR")]
        real: PathBuf,
        #[arg(long, value_name = "DIR")]
        fake: PathBuf,
        /// Generator tag of the fake images, e.g. LDM or ProGAN.
        #[arg(long)]
        generator: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value = "")]
        source_note: String,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Draw a class-balanced subset using the run seed.
    Sample {
        manifest: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Check every sample's file digest.
    Verify { manifest: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into());
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).with_target(false).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
