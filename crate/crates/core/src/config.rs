//! Plain-text `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::SplitKind;
use crate::error::{Error, Result};
use crate::io_util::read_to_string;
use crate::model::{ModelConfig, Variant};
use crate::train::{EvalConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    pub split: SplitKind,
    pub variant: Variant,
    pub out: PathBuf,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: PathBuf::from("data"),
            split: SplitKind::CommonAerials,
            variant: Variant::Xia,
            out: PathBuf::from("out"),
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig {
                threads: 1,
                ..EvalConfig::default()
            },
        }
    }
}

/// Every accepted key, in file order.
pub const KEYS: [&str; 24] = [
    "data",
    "split",
    "variant",
    "out",
    "seed",
    "joints",
    "key_len",
    "step_len",
    "coeffs",
    "d_model",
    "gcn_layers",
    "gcn_hidden",
    "heads_key",
    "heads_value",
    "unit_mm",
    "epochs",
    "batch_size",
    "lr",
    "in_len",
    "stride",
    "max_steps",
    "subsequences",
    "eval_threads",
    "eval_seed",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key `{key}`")))
}

impl ExperimentConfig {
    /// Sets one key. `seed` also seeds training and evaluation unless those
    /// are set afterwards.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data" => self.data = PathBuf::from(value),
            "split" => self.split = value.parse().map_err(|e: Error| Error::Config(format!("key `split`: {e}")))?,
            "variant" => self.variant = value.parse().map_err(|e: Error| Error::Config(format!("key `variant`: {e}")))?,
            "out" => self.out = PathBuf::from(value),
            "seed" => {
                self.seed = num(key, value)?;
                self.train.seed = self.seed;
                self.eval.seed = self.seed;
            }
            "joints" => self.model.joints = num(key, value)?,
            "key_len" => self.model.key_len = num(key, value)?,
            "step_len" => self.model.step_len = num(key, value)?,
            "coeffs" => self.model.coeffs = num(key, value)?,
            "d_model" => self.model.d_model = num(key, value)?,
            "gcn_layers" => self.model.gcn_layers = num(key, value)?,
            "gcn_hidden" => self.model.gcn_hidden = num(key, value)?,
            "heads_key" => self.model.heads_key = num(key, value)?,
            "heads_value" => self.model.heads_value = num(key, value)?,
            "unit_mm" => self.model.unit_mm = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "lr" => self.train.lr = num(key, value)?,
            "in_len" => {
                self.train.in_len = num(key, value)?;
                self.eval.in_len = self.train.in_len;
            }
            "stride" => self.train.stride = num(key, value)?,
            "max_steps" => {
                self.train.max_steps = match value {
                    "" | "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "subsequences" => self.eval.subsequences = num(key, value)?,
            "eval_threads" => self.eval.threads = num(key, value)?,
            "eval_seed" => self.eval.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "data" => self.data.display().to_string(),
            "split" => self.split.to_string(),
            "variant" => self.variant.to_string(),
            "out" => self.out.display().to_string(),
            "seed" => self.seed.to_string(),
            "joints" => self.model.joints.to_string(),
            "key_len" => self.model.key_len.to_string(),
            "step_len" => self.model.step_len.to_string(),
            "coeffs" => self.model.coeffs.to_string(),
            "d_model" => self.model.d_model.to_string(),
            "gcn_layers" => self.model.gcn_layers.to_string(),
            "gcn_hidden" => self.model.gcn_hidden.to_string(),
            "heads_key" => self.model.heads_key.to_string(),
            "heads_value" => self.model.heads_value.to_string(),
            "unit_mm" => self.model.unit_mm.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "lr" => self.train.lr.to_string(),
            "in_len" => self.train.in_len.to_string(),
            "stride" => self.train.stride.to_string(),
            "max_steps" => self.train.max_steps.map_or("none".to_string(), |s| s.to_string()),
            "subsequences" => self.eval.subsequences.to_string(),
            "eval_threads" => self.eval.threads.to_string(),
            "eval_seed" => self.eval.seed.to_string(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        })
    }

    /// Applies `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        ExperimentConfig::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.train.in_len < self.model.window_len() {
            return Err(Error::Config(format!(
                "in_len {} is shorter than key_len + step_len = {}",
                self.train.in_len,
                self.model.window_len()
            )));
        }
        if self.eval.subsequences == 0 {
            return Err(Error::Config("subsequences must be positive".into()));
        }
        Ok(())
    }
}
