//! Flat `key = value` run configuration with dotted namespaces.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Every recognised key with its default. An empty default means "unset".
pub const DEFAULTS: &[(&str, &str)] = &[
    ("corpus.path", ""),
    ("corpus.manifest", ""),
    ("corpus.fractions", "textedge"),
    ("corpus.split_seed", "0"),
    ("corpus.schema.id", "id"),
    ("corpus.schema.formula", "formula"),
    ("corpus.schema.description", "description"),
    ("corpus.schema.band_gap", "band_gap"),
    ("corpus.schema.volume", "volume"),
    ("corpus.schema.is_gap_direct", "is_gap_direct"),
    ("prep.num", "true"),
    ("prep.ang", "true"),
    ("prep.stopwords", "true"),
    ("prep.cls", "true"),
    ("prep.stopwords_file", ""),
    ("tokenizer.kind", "trained"),
    ("tokenizer.vocab_size", "32000"),
    ("tokenizer.max_length", "888"),
    ("model.source", "toy"),
    ("model.seed", "0"),
    ("model.hidden_size", "32"),
    ("model.num_layers", "2"),
    ("model.num_heads", "2"),
    ("model.ffn_size", "64"),
    ("model.dropout", "0.2"),
    ("model.max_positions", "1024"),
    ("train.task", "band_gap"),
    ("train.batch_size", "64"),
    ("train.lr_max", "0.001"),
    ("train.epochs", "200"),
    ("train.scaler", "z_score"),
    ("train.seed", "0"),
    ("train.pct_warmup", "0.3"),
    ("train.final_lr_fraction", "0.04"),
    ("train.grad_clip", "none"),
    ("train.retention", "best_and_last"),
    ("train.train_size", "all"),
    ("eval.checkpoint", ""),
    ("eval.split", "test"),
    ("predict.checkpoint", ""),
    ("predict.input", ""),
    ("zero_shot.checkpoint", ""),
    ("zero_shot.head_seed", "0"),
    ("transfer.source", ""),
    ("ablate.toggles", "modified_tokenizer,label_scaling,cls_token,num_token,ang_token,stopwords"),
    ("sweep.dimension", ""),
    ("sweep.values", ""),
    ("run.deterministic", "false"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn split_pair(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

impl Config {
    /// Defaults, then the file (if any), then each `key=value` override.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Config, CliError> {
        let mut cfg = Config::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            cfg.merge_text(&text)?;
        }
        for o in overrides {
            let (k, v) = split_pair(o).ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) =
                split_pair(line).ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown config key {key:?}"))),
        }
    }

    /// Same keys, sorted, one per line; reading it back gives an equal config.
    pub fn frozen(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key is declared in DEFAULTS")
    }

    pub fn opt(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    pub fn required(&self, key: &str) -> Result<&str, CliError> {
        self.opt(key).ok_or_else(|| CliError::Config(format!("{key} must be set")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.required(key).map(PathBuf::from)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse()
            .map_err(|e| CliError::Config(format!("{key} = {v:?}: {e}")))
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key).to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            v => Err(CliError::Config(format!("{key} = {v:?} is not a boolean"))),
        }
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }
}
