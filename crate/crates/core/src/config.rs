//! Run configuration and its flat key-value file form.

use serde::{Deserialize, Serialize};

use crate::data::SplitSpec;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.7;
pub const DEFAULT_ALPHA: f64 = 0.1;
/// Calibration share for a 1:10 calibration/test ratio.
pub const DEFAULT_SPLIT_FRACTION: f64 = 1.0 / 11.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub lambda: f64,
    pub tau: f64,
    pub alphas: Vec<f64>,
    pub seed: u64,
    pub split: SplitSpec,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
            alphas: vec![DEFAULT_ALPHA],
            seed: 0,
            split: SplitSpec {
                calibration_fraction: DEFAULT_SPLIT_FRACTION,
                seed: 0,
            },
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        check_tau(self.tau)?;
        if self.alphas.is_empty() {
            return Err(Error::InvalidConfig("at least one alpha required".into()));
        }
        for &a in &self.alphas {
            check_alpha(a)?;
        }
        SplitSpec::new(self.split.calibration_fraction, self.split.seed)?;
        Ok(())
    }
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("lambda {lambda} not in [0, 1]")))
    }
}

pub fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("tau {tau} not in (0, 1)")))
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha {alpha} not in (0, 1)")))
    }
}

/// Parses a fraction written either as a decimal (`0.25`) or a ratio (`1/11`).
pub fn parse_fraction(text: &str) -> Result<f64> {
    let text = text.trim();
    let bad = || Error::InvalidConfig(format!("cannot parse fraction `{text}`"));
    let value = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| bad())?;
            let den: f64 = den.trim().parse().map_err(|_| bad())?;
            if den == 0.0 {
                return Err(bad());
            }
            num / den
        }
        None => text.parse().map_err(|_| bad())?,
    };
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum FractionValue {
    Number(f64),
    Text(String),
}

impl FractionValue {
    pub fn value(&self) -> Result<f64> {
        match self {
            FractionValue::Number(v) => Ok(*v),
            FractionValue::Text(t) => parse_fraction(t),
        }
    }
}

/// On-disk configuration. Every key is optional and overridable from the
/// command line.
///
/// ```toml
/// lambda = 0.5
/// tau = 0.7
/// alpha = [0.1, 0.05]
/// seed = 42
/// split_fraction = "1/11"
/// reps = 100
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub alpha: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub split_fraction: Option<FractionValue>,
    pub reps: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }
}
