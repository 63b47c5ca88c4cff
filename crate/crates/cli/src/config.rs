//! Run configuration: command-line flags layered over an optional TOML file.
//!
//! Precedence, highest first: flags, `GEM_SEED` (seed only), config file,
//! built-in defaults. Relative paths in a config file resolve against the
//! file's own directory so a bundle can be moved as a unit.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use gem_core::baselines::{InputKind, Method, DEFAULT_LAMBDA};
use gem_core::gmm::{validate_n_sigma, FitConfig, DEFAULT_N_SIGMA};
use serde::Deserialize;

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "GEM_SEED";
pub const DEFAULT_TV_ORDER: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Table,
    Csv,
}

/// Flags shared by every subcommand; each one may also come from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file of `key = value` settings; flags take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// gem, tv, topk, entropy, last-layer or best-layer.
    #[arg(long)]
    pub method: Option<String>,
    /// ID training corpus (embeddings for gem, layer traces for tv/last-layer/best-layer).
    #[arg(long, value_name = "PATH")]
    pub train: Option<PathBuf>,
    /// ID evaluation split.
    #[arg(long, value_name = "PATH")]
    pub id_test: Option<PathBuf>,
    /// OOD evaluation split.
    #[arg(long, value_name = "PATH")]
    pub ood_test: Option<PathBuf>,
    /// ID validation split for best-layer selection.
    #[arg(long, value_name = "PATH")]
    pub val_id: Option<PathBuf>,
    /// OOD validation split for best-layer selection.
    #[arg(long, value_name = "PATH")]
    pub val_ood: Option<PathBuf>,
    /// Fitted GEM detector file (detect; optional for eval/roc instead of --train).
    #[arg(long, value_name = "PATH")]
    pub detector: Option<PathBuf>,
    /// Embeddings to score (detect).
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Output file, or directory for ablate.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Largest mixture considered by BIC (default 15).
    #[arg(long)]
    pub max_components: Option<usize>,
    /// EM iteration cap per restart (default 500).
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// EM stops when the relative log-likelihood gain drops below this (default 1e-8).
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// EM restarts per component count (default 5).
    #[arg(long)]
    pub restarts: Option<usize>,
    /// RNG seed for EM restarts (default 42; also read from GEM_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Width of the ID intervals in component standard deviations (default 3).
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    /// Differential order for the TV score.
    #[arg(long)]
    pub tv_order: Option<usize>,
    /// Covariance regularisation for the TV score.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Output format (eval/fit default table, detect default JSON lines).
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    method: Option<String>,
    train: Option<PathBuf>,
    id_test: Option<PathBuf>,
    ood_test: Option<PathBuf>,
    val_id: Option<PathBuf>,
    val_ood: Option<PathBuf>,
    detector: Option<PathBuf>,
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    max_components: Option<usize>,
    max_iters: Option<usize>,
    rel_tol: Option<f64>,
    restarts: Option<usize>,
    seed: Option<u64>,
    sigma: Option<f64>,
    tv_order: Option<usize>,
    lambda: Option<f64>,
    format: Option<Format>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train,
            &mut cfg.id_test,
            &mut cfg.ood_test,
            &mut cfg.val_id,
            &mut cfg.val_ood,
            &mut cfg.detector,
            &mut cfg.input,
            &mut cfg.out,
        ] {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub train: Option<PathBuf>,
    pub id_test: Option<PathBuf>,
    pub ood_test: Option<PathBuf>,
    pub val_id: Option<PathBuf>,
    pub val_ood: Option<PathBuf>,
    pub detector: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub fit: FitConfig,
    /// `None` keeps a loaded detector's own multiplier (3 when fitting).
    pub n_sigma: Option<f64>,
    pub tv_order: usize,
    pub lambda: f64,
    pub format: Option<Format>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Gem,
            train: None,
            id_test: None,
            ood_test: None,
            val_id: None,
            val_ood: None,
            detector: None,
            input: None,
            out: None,
            fit: FitConfig::default(),
            n_sigma: None,
            tv_order: DEFAULT_TV_ORDER,
            lambda: DEFAULT_LAMBDA,
            format: None,
        }
    }
}

impl RunConfig {
    /// Merges flags, the environment seed and the config file.
    pub fn resolve(flags: &Flags, env_seed: Option<&str>) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let env_seed = env_seed
            .map(|s| {
                u64::from_str(s.trim())
                    .map_err(|_| CliError::usage(format!("{SEED_ENV}={s:?} is not an unsigned integer")))
            })
            .transpose()?;

        let defaults = RunConfig::default();
        let method = match flags.method.clone().or(file.method) {
            Some(name) => name.parse::<Method>()?,
            None => defaults.method,
        };
        let fit = FitConfig {
            max_components: flags
                .max_components
                .or(file.max_components)
                .unwrap_or(defaults.fit.max_components),
            max_iters: flags.max_iters.or(file.max_iters).unwrap_or(defaults.fit.max_iters),
            rel_tol: flags.rel_tol.or(file.rel_tol).unwrap_or(defaults.fit.rel_tol),
            restarts: flags.restarts.or(file.restarts).unwrap_or(defaults.fit.restarts),
            seed: flags
                .seed
                .or(env_seed)
                .or(file.seed)
                .unwrap_or(defaults.fit.seed),
            ..defaults.fit.clone()
        };
        let cfg = RunConfig {
            method,
            train: flags.train.clone().or(file.train),
            id_test: flags.id_test.clone().or(file.id_test),
            ood_test: flags.ood_test.clone().or(file.ood_test),
            val_id: flags.val_id.clone().or(file.val_id),
            val_ood: flags.val_ood.clone().or(file.val_ood),
            detector: flags.detector.clone().or(file.detector),
            input: flags.input.clone().or(file.input),
            out: flags.out.clone().or(file.out),
            fit,
            n_sigma: flags.sigma.or(file.sigma),
            tv_order: flags.tv_order.or(file.tv_order).unwrap_or(defaults.tv_order),
            lambda: flags.lambda.or(file.lambda).unwrap_or(defaults.lambda),
            format: flags.format.or(file.format),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if let Some(n) = self.n_sigma {
            validate_n_sigma(n)?;
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CliError::usage(format!(
                "--lambda {} must be finite and non-negative",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.n_sigma.unwrap_or(DEFAULT_N_SIGMA)
    }

    /// The path behind `flag`, or a usage error naming it.
    pub fn require<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        path.as_deref().ok_or_else(|| {
            CliError::usage(format!("--{flag} is required for method {}", self.method))
        })
    }

    pub fn input_kind(&self) -> InputKind {
        self.method.input_kind()
    }
}
