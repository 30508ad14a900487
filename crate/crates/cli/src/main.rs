//! Single executable exposing the whole pipeline: synthetic data
//! generation, point-cloud extraction, training, cross-validation, and
//! critical-point interpretability.

mod commands;
mod util;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "onhgdl",
    version,
    about = "Glaucoma classification from 3D optic-nerve-head point clouds"
)]
struct Cli {
    /// Worker threads (default: available cores; env ONHGDL_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic ONH dataset (ONHSEG files).
    Synth {
        /// JSON job config; defaults cover the desk-scale dataset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extract aligned point clouds (ONHPC) from segmented volumes.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue past per-file failures and still exit 0.
        #[arg(long)]
        keep_going: bool,
        #[arg(long, default_value_t = 1750.0)]
        crop_radius_um: f64,
    },
    /// Train one model on a single subject-exclusive split.
    Train {
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grouped k-fold cross-validation with per-fold checkpoints.
    Crossval {
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict clouds to one tissue layer (e.g. RNFL_PLT, Choroid).
        #[arg(long)]
        tissue: Option<String>,
    },
    /// Critical points, density map, quadrant stats and projections.
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// File listing the scan ids to analyze (default: all in data).
        #[arg(long)]
        scans: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 75.0)]
        radius_um: f64,
        /// Evaluation-path subsample size.
        #[arg(long, default_value_t = 1024)]
        points_per_cloud: usize,
        /// Projection grid bin size.
        #[arg(long, default_value_t = 50.0)]
        bin_um: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    util::init_threads(cli.threads);
    let result = match cli.command {
        Command::Synth { config, out, seed } => commands::synth::run(config, out, seed),
        Command::Extract {
            input,
            out,
            keep_going,
            crop_radius_um,
        } => commands::extract::run(input, out, keep_going, crop_radius_um),
        Command::Train {
            model,
            data,
            config,
            out,
            seed,
        } => commands::train::run_train(model, data, config, out, seed),
        Command::Crossval {
            model,
            data,
            config,
            out,
            seed,
            tissue,
        } => commands::train::run_crossval(model, data, config, out, seed, tissue),
        Command::Interpret {
            checkpoint,
            data,
            scans,
            out,
            radius_um,
            points_per_cloud,
            bin_um,
        } => commands::interpret::run(
            checkpoint,
            data,
            scans,
            out,
            radius_um,
            points_per_cloud,
            bin_um,
        ),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}
