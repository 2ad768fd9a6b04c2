//! Training configuration and its flat `key = value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(format!("unknown optimizer {other:?} (expected adam or sgd)")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub d_model: usize,
    pub heads: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub beta: f64,
    pub top_k: usize,
    pub tau: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub noise_ratio: f64,
    pub max_chain_edges: usize,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            alpha: 0.7,
            lambda: 0.5,
            beta: 0.1,
            top_k: 4,
            tau: 0.1,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            noise_ratio: 0.0,
            max_chain_edges: 5,
            optimizer: OptimizerKind::Adam,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "d_model",
    "heads",
    "alpha",
    "lambda",
    "beta",
    "top_k",
    "tau",
    "learning_rate",
    "epochs",
    "batch_size",
    "seed",
    "noise_ratio",
    "max_chain_edges",
    "optimizer",
];

fn parse<T: FromStr>(key: &str, raw: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>().map_err(|e| format!("cannot parse {key} value {raw:?}: {e}"))
}

impl TrainConfig {
    /// Sets one key from its textual value, checking its range.
    pub fn set(&mut self, key: &str, raw: &str) -> std::result::Result<(), String> {
        match key {
            "d_model" => self.d_model = parse(key, raw)?,
            "heads" => self.heads = parse(key, raw)?,
            "alpha" => self.alpha = parse(key, raw)?,
            "lambda" => self.lambda = parse(key, raw)?,
            "beta" => self.beta = parse(key, raw)?,
            "top_k" => self.top_k = parse(key, raw)?,
            "tau" => self.tau = parse(key, raw)?,
            "learning_rate" => self.learning_rate = parse(key, raw)?,
            "epochs" => self.epochs = parse(key, raw)?,
            "batch_size" => self.batch_size = parse(key, raw)?,
            "seed" => self.seed = parse(key, raw)?,
            "noise_ratio" => self.noise_ratio = parse(key, raw)?,
            "max_chain_edges" => self.max_chain_edges = parse(key, raw)?,
            "optimizer" => self.optimizer = parse(key, raw)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        self.check_key(key)
    }

    fn check_key(&self, key: &str) -> std::result::Result<(), String> {
        let bad = |what: &str| Err(format!("{key} {what}"));
        match key {
            "d_model" if self.d_model == 0 => bad("must be at least 1"),
            "heads" if self.heads == 0 => bad("must be at least 1"),
            "alpha" if !(0.0..=1.0).contains(&self.alpha) => bad("must lie in [0, 1]"),
            "lambda" if !(self.lambda >= 0.0 && self.lambda.is_finite()) => bad("must be a finite value ≥ 0"),
            "beta" if !(self.beta >= 0.0 && self.beta.is_finite()) => bad("must be a finite value ≥ 0"),
            "top_k" if self.top_k == 0 => bad("must be at least 1"),
            "tau" if !(self.tau > 0.0 && self.tau.is_finite()) => bad("must be positive"),
            "learning_rate" if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) => {
                bad("must be a finite value ≥ 0")
            }
            "batch_size" if self.batch_size == 0 => bad("must be at least 1"),
            "noise_ratio" if !(0.0..=1.0).contains(&self.noise_ratio) => bad("must lie in [0, 1]"),
            "max_chain_edges" if self.max_chain_edges == 0 => bad("must be at least 1"),
            _ => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for key in CONFIG_KEYS {
            self.check_key(key).map_err(Error::Config)?;
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "heads: d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    /// Parses the flat format. Blank lines and `#` comments are ignored.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`, got {line:?}")))?;
            let key = key.trim();
            cfg.set(key, value.trim()).map_err(|e| Error::Config(format!("line {line_no}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config back into the flat format.
    pub fn to_flat_string(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let v = &json[*key];
            let rendered = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&format!("{key} = {rendered}\n"));
        }
        out
    }
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    TrainConfig::parse_str(&text)
}
