use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use conu::config::{parse_fraction, Config, ConfigFile, DEFAULT_ALPHA, DEFAULT_LAMBDA, DEFAULT_SPLIT_FRACTION, DEFAULT_TAU};
use conu::data::SplitSpec;

/// Options shared by every subcommand. Precedence: flag, then `CONU_*`
/// environment variable, then config file, then built-in default.
#[derive(Debug, Clone, Args)]
pub struct Settings {
    /// Flat key-value (TOML) config file.
    #[arg(long, env = "CONU_CONFIG")]
    pub config: Option<PathBuf>,
    /// Error rate; repeat for several.
    #[arg(long = "alpha", env = "CONU_ALPHA", value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[arg(long, env = "CONU_LAMBDA")]
    pub lambda: Option<f64>,
    #[arg(long, env = "CONU_TAU")]
    pub tau: Option<f64>,
    /// Calibration share, decimal or ratio such as `1/11`.
    #[arg(long, env = "CONU_SPLIT_FRACTION")]
    pub split_fraction: Option<String>,
    #[arg(long, env = "CONU_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "CONU_REPS")]
    pub reps: Option<usize>,
    #[arg(long, env = "CONU_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: Config,
    pub reps: usize,
    pub out_dir: Option<PathBuf>,
}

impl Resolved {
    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .context("--out-dir is required for this command")
    }
}

impl Settings {
    pub fn resolve(&self) -> Result<Resolved> {
        let file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let split_fraction = match &self.split_fraction {
            Some(text) => parse_fraction(text)?,
            None => match &file.split_fraction {
                Some(v) => v.value()?,
                None => DEFAULT_SPLIT_FRACTION,
            },
        };
        let alphas = if !self.alphas.is_empty() {
            self.alphas.clone()
        } else {
            file.alpha.clone().unwrap_or_else(|| vec![DEFAULT_ALPHA])
        };
        let seed = self.seed.or(file.seed).unwrap_or(0);
        let config = Config {
            lambda: self.lambda.or(file.lambda).unwrap_or(DEFAULT_LAMBDA),
            tau: self.tau.or(file.tau).unwrap_or(DEFAULT_TAU),
            alphas,
            seed,
            split: SplitSpec {
                calibration_fraction: split_fraction,
                seed,
            },
        };
        config.validate()?;
        Ok(Resolved {
            config,
            reps: self.reps.or(file.reps).unwrap_or(1),
            out_dir: self.out_dir.clone(),
        })
    }
}
