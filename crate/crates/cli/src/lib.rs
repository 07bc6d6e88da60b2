//! Implementation of the `gmmt` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! runtime failures.

mod args;
mod commands;
mod render;

use std::io::Write;
use std::path::PathBuf;

use clap::Parser;
use gumbel_mmt::{Error as CoreError, RunConfig};

pub use args::{split_overrides, Cli, Command, Common, Overrides};
pub use render::render_gates;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("missing dataset in {}: run `gmmt generate` first", .0.display())]
    MissingData(PathBuf),
    #[error("{0}")]
    Runtime(String),
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_config() => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command,
/// writing its report to `out`.
pub fn run(args: Vec<String>, out: &mut dyn Write) -> CliResult<()> {
    let (rest, overrides) = split_overrides(args).map_err(CliError::Usage)?;
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}")?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    match cli.command {
        Command::Generate { common } => {
            let cfg = resolve(&common, &overrides)?;
            commands::generate(&cfg, out)
        }
        Command::Train {
            common,
            ablation,
            resume,
        } => {
            let mut overrides = overrides;
            if let Some(a) = ablation {
                overrides.push(("model.ablation".into(), a));
            }
            if resume {
                commands::resume(&common, &overrides, out)
            } else {
                let cfg = resolve(&common, &overrides)?;
                commands::train(&cfg, out)
            }
        }
        Command::Eval {
            common,
            checkpoint,
            split,
            dump,
        } => {
            let split = split.parse()?;
            commands::eval(&common, &overrides, checkpoint, split, dump, out)
        }
        Command::InspectGates {
            common,
            checkpoint,
            example,
        } => commands::inspect_gates(&common, &overrides, checkpoint, example, out),
        Command::AblationSweep { common } => {
            let cfg = resolve(&common, &overrides)?;
            commands::ablation_sweep(&cfg, out)
        }
    }
}

/// Config file (or defaults) with command-line overrides applied.
pub fn resolve(common: &Common, overrides: &[(String, String)]) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply(&mut cfg, overrides)?;
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, overrides: &[(String, String)]) -> CliResult<()> {
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(())
}
