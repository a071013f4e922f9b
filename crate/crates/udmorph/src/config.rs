//! Run configuration: a flat `key=value` file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;
use udmorph_core::model::{ModelConfig, ModelError, TrainConfig};

use crate::formats::{read_text, FormatError};

const TRAIN_KEYS: [&str; 9] = [
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
    "word_dropout",
    "clip_norm",
    "beta1",
    "beta2",
    "epsilon",
];

const PATH_KEYS: [&str; 7] = [
    "train",
    "dev",
    "test",
    "word_vectors",
    "contextual_sidecar",
    "category_table",
    "model_out",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    Value { key: String, value: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    ModelConfig::is_key(key) || TRAIN_KEYS.contains(&key) || PATH_KEYS.contains(&key)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax {
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected key=value, got `{line}`")))?;
            let key = key.trim();
            if config.entries.contains_key(key) {
                return Err(syntax(format!("duplicate key `{key}`")));
            }
            config.set(key, value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&read_text(path)?)
    }

    /// Sets or overrides one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !known(key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.get(key)
            .map(|value| {
                value.parse().map_err(|_| ConfigError::Value {
                    key: key.to_string(),
                    value: value.to_string(),
                })
            })
            .transpose()
    }

    pub fn model_config(&self) -> Result<ModelConfig, ConfigError> {
        let mut config = ModelConfig::default();
        for (key, value) in &self.entries {
            if ModelConfig::is_key(key) {
                config.set(key, value)?;
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let mut config = TrainConfig::default();
        if let Some(v) = self.parsed("learning_rate")? {
            config.learning_rate = v;
        }
        if let Some(v) = self.parsed("batch_size")? {
            config.batch_size = v;
        }
        if let Some(v) = self.parsed("epochs")? {
            config.epochs = v;
        }
        if let Some(v) = self.parsed("seed")? {
            config.seed = v;
        }
        if let Some(v) = self.parsed("word_dropout")? {
            config.word_dropout = v;
        }
        match self.get("clip_norm") {
            Some("none") => config.clip_norm = None,
            Some(_) => config.clip_norm = self.parsed("clip_norm")?,
            None => {}
        }
        if let Some(v) = self.parsed("beta1")? {
            config.beta1 = v;
        }
        if let Some(v) = self.parsed("beta2")? {
            config.beta2 = v;
        }
        if let Some(v) = self.parsed("epsilon")? {
            config.epsilon = v;
        }
        Ok(config)
    }

    /// Sorted `key=value` lines, without the output location.
    pub fn canonical_text(&self) -> String {
        self.entries
            .iter()
            .filter(|(k, _)| *k != "model_out")
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// [`text_hash`] of [`canonical_text`](Self::canonical_text).
    pub fn hash(&self) -> String {
        text_hash(&self.canonical_text())
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn text_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}
