//! Optional TOML run configuration. Precedence: flags > file > defaults.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub proj: Option<String>,
    pub k: Option<usize>,
    pub width_ratio: Option<f64>,
    pub layers: Option<String>,
    pub ratio: Option<f64>,
    pub sample_size: Option<usize>,
    pub budget: Option<u64>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub ngram: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// First present value among flag and config entry, else the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
