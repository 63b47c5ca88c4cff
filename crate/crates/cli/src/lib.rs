//! `gem`: fit GEM detectors, score corpora, and run the evaluation and
//! ablation sweeps against the baseline detectors.
//!
//! Exit codes are a stable contract: 0 success, 1 I/O failure, 2 invalid
//! input or arguments.

pub mod commands;
pub mod config;
pub mod error;

use std::fs;
use std::io::Write;
use std::path::Path;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_ablate, cmd_detect, cmd_eval, cmd_fit, cmd_roc, score_splits, Ablation, AblationRow,
    DetectLine, EvalOutput, Scoring,
};
pub use config::{Flags, Format, RunConfig, SEED_ENV};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "gem", version, about = "Out-of-distribution detection from embedding geometry")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Fit a GEM detector on ID training embeddings and write it to --out.
    Fit(Flags),
    /// Score --input with --detector; one JSON line per sample.
    Detect(Flags),
    /// Evaluate a method on --id-test / --ood-test.
    Eval(Flags),
    /// Sweep max_components and the sigma multiplier; writes two CSVs into --out.
    Ablate(Flags),
    /// ROC curve (threshold,fpr,tpr) for a method on --id-test / --ood-test.
    Roc(Flags),
}

impl Command {
    pub fn flags(&self) -> &Flags {
        match self {
            Command::Fit(f) | Command::Detect(f) | Command::Eval(f) | Command::Ablate(f) | Command::Roc(f) => f,
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(CliError::Output)
}

/// Runs one command, printing to `stdout`; `env_seed` is the value of `GEM_SEED`, if set.
pub fn run(command: &Command, env_seed: Option<&str>, stdout: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::resolve(command.flags(), env_seed)?;
    match command {
        Command::Fit(_) => {
            let det = cmd_fit(&cfg)?;
            emit(stdout, &commands::render_fit(&det, cfg.format.unwrap_or(Format::Table))?)
        }
        Command::Detect(_) => {
            let lines = cmd_detect(&cfg)?;
            let text = commands::render_detect(&lines, cfg.format.unwrap_or(Format::Json))?;
            match &cfg.out {
                Some(path) => write_file(path, &text),
                None => emit(stdout, &text),
            }
        }
        Command::Eval(_) => {
            let report = cmd_eval(&cfg)?;
            if let Some(path) = &cfg.out {
                write_file(path, &commands::render_eval(&report, Format::Json)?)?;
            }
            emit(stdout, &commands::render_eval(&report, cfg.format.unwrap_or(Format::Table))?)
        }
        Command::Ablate(_) => {
            let ablation = cmd_ablate(&cfg)?;
            match (&cfg.out, cfg.format.unwrap_or(Format::Table)) {
                (Some(dir), format) => {
                    let paths = ablation.write(dir)?;
                    if format == Format::Table {
                        emit(stdout, &ablation.table())?;
                    }
                    for p in paths {
                        emit(stdout, &format!("wrote {}\n", p.display()))?;
                    }
                    Ok(())
                }
                (None, Format::Table) => emit(stdout, &ablation.table()),
                (None, Format::Json) => emit(
                    stdout,
                    &commands::json_pretty(&serde_json::json!({
                        "max_components": ablation.by_max_components,
                        "n_sigma": ablation.by_sigma,
                    }))?,
                ),
                (None, Format::Csv) => emit(
                    stdout,
                    &format!("{}\n{}", ablation.max_components_csv(), ablation.sigma_csv()),
                ),
            }
        }
        Command::Roc(_) => {
            let curve = cmd_roc(&cfg)?;
            let text = match cfg.format.unwrap_or(Format::Csv) {
                Format::Json => commands::json_pretty(
                    &curve
                        .points
                        .iter()
                        .map(|p| serde_json::json!({ "threshold": p.threshold, "fpr": p.fpr, "tpr": p.tpr }))
                        .collect::<Vec<_>>(),
                )?,
                _ => curve.to_csv(),
            };
            match &cfg.out {
                Some(path) => write_file(path, &text),
                None => emit(stdout, &text),
            }
        }
    }
}
