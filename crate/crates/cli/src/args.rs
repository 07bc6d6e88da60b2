use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "gmmt",
    version,
    about = "Gumbel-Attention multi-modal translation experiments",
    after_help = "Any config key can be overridden with `--section.key value`, e.g. `--model.gumbel_layer 3`.\n\
                  Log verbosity is read from RUST_LOG."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file (flat `section.key = value` lines).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset into io.data_dir.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes a checkpoint, a best-validation checkpoint and a CSV log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Ablation variant(s), comma separated; shorthand for --model.ablation.
        #[arg(long)]
        ablation: Option<String>,
        /// Continue from the checkpoint at io.checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load (defaults to io.checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Write one JSON line per example here.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Render the inference-time gate matrix of one example.
    InspectGates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Example id (ids are unique across splits).
        #[arg(long)]
        example: u64,
    },
    /// Train every ablation variant and write a summary CSV.
    AblationSweep {
        #[command(flatten)]
        common: Common,
    },
}

/// `(section.key, value)` pairs taken from the command line.
pub type Overrides = Vec<(String, String)>;

/// Splits `--section.key value` and `--section.key=value` overrides out of
/// the raw arguments; everything else is left for clap.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg
            .strip_prefix("--")
            .filter(|f| f.split('=').next().unwrap_or("").contains('.'))
        else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| format!("--{flag} needs a value"))?;
                overrides.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}
