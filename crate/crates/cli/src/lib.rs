//! Command-line harness: trains matched full-precision / binarized network
//! pairs and emits saliency maps, noise sweeps and probes as PGM/PPM images
//! and CSV tables.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod netpbm;
pub mod results;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::SaliencyArgs;
use crate::config::{ExperimentConfig, MethodName};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "binsight", version, about = "Saliency experiments on full-precision and binarized CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Run a single seed instead of the config's list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the full-precision network and its binarized twin for every seed.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Compute one saliency map per network.
    Saliency {
        #[command(flatten)]
        common: Common,
        /// A single model file instead of the trained pairs.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory holding `seed<N>-{fp,bnn}.model` files.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Test-set image index.
        #[arg(long, conflicts_with = "image_file")]
        image: Option<usize>,
        /// IDX image file; its first image is explained.
        #[arg(long)]
        image_file: Option<PathBuf>,
        /// gradient, smoothgrad or gradcam.
        #[arg(long, value_parser = parse_method)]
        method: Option<MethodName>,
    },
    /// SmoothGrad noise sweep for both networks of every seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Perturbation amplification and randomization sanity checks.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Compare two PGM maps.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Directory for `diff.pgm`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn parse_method(s: &str) -> Result<MethodName, String> {
    MethodName::parse(s).ok_or_else(|| format!("unknown method {s:?} (gradient, smoothgrad, gradcam)"))
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

/// Runs a parsed command and returns its report lines.
pub fn run(cli: Cli) -> Result<Vec<String>, CliError> {
    match cli.command {
        Command::Train { common } => commands::cmd_train(load_config(&common)?),
        Command::Saliency {
            common,
            model,
            models,
            image,
            image_file,
            method,
        } => commands::cmd_saliency(
            load_config(&common)?,
            SaliencyArgs {
                model,
                models,
                image,
                image_file,
                method,
            },
        ),
        Command::Sweep { common, models } => commands::cmd_sweep(load_config(&common)?, models.as_deref()),
        Command::Probe { common, models } => commands::cmd_probe(load_config(&common)?, models.as_deref()),
        Command::Compare { a, b, out } => commands::cmd_compare(&a, &b, &out),
    }
}
