//! Service configuration: defaults, an optional TOML file, then environment
//! overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use labelfact_core::HyperParams;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub bind: String,
    pub port: u16,
    /// Largest accepted request body.
    pub max_payload_bytes: usize,
    /// How long an annotation waits for its local refresh before answering
    /// with stale scores.
    pub correction_timeout_ms: u64,
    /// Training cells processed per lock acquisition by the background worker.
    pub train_chunk: usize,
    pub min_count: u64,
    pub hp: HyperParams,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: PathBuf::from("labelfact-data"),
            bind: "127.0.0.1".into(),
            port: 8080,
            max_payload_bytes: 16 << 20,
            correction_timeout_ms: 2000,
            train_chunk: 50_000,
            min_count: labelfact_core::featurize::DEFAULT_MIN_COUNT,
            hp: HyperParams::default(),
        }
    }
}

impl ServiceConfig {
    /// Defaults, overlaid by `path` (if given), overlaid by `LABELFACT_*`
    /// environment variables.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Applies overrides from `lookup`, which maps a variable name to its value.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, raw: String) -> Result<T> {
            raw.trim()
                .parse()
                .map_err(|_| ServiceError::Config(format!("{key}={raw:?} is not valid")))
        }
        if let Some(v) = lookup("LABELFACT_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = lookup("LABELFACT_BIND") {
            self.bind = v;
        }
        if let Some(v) = lookup("LABELFACT_PORT") {
            self.port = parse("LABELFACT_PORT", v)?;
        }
        if let Some(v) = lookup("LABELFACT_MAX_PAYLOAD") {
            self.max_payload_bytes = parse("LABELFACT_MAX_PAYLOAD", v)?;
        }
        if let Some(v) = lookup("LABELFACT_ALPHA") {
            self.hp.alpha = parse("LABELFACT_ALPHA", v)?;
        }
        if let Some(v) = lookup("LABELFACT_GAMMA") {
            self.hp.gamma = parse("LABELFACT_GAMMA", v)?;
        }
        if let Some(v) = lookup("LABELFACT_K") {
            self.hp.k = parse("LABELFACT_K", v)?;
        }
        if let Some(v) = lookup("LABELFACT_SEED") {
            self.hp.seed = parse("LABELFACT_SEED", v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.min_count == 0 {
            return Err(ServiceError::Config("min_count must be at least 1".into()));
        }
        if self.train_chunk == 0 {
            return Err(ServiceError::Config(
                "train_chunk must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn correction_timeout(&self) -> Duration {
        Duration::from_millis(self.correction_timeout_ms)
    }
}
