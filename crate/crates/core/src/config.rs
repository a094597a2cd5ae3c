//! Layered configuration: built-in defaults, then a TOML file, then
//! `SCENECOT_<SECTION>_<KEY>` environment variables, then command-line
//! flags. Every flag names a `section.key` of the file, so anything settable
//! on the command line is settable in the file too.
//!
//! Values from the environment and from flags are read as TOML literals
//! (`4`, `2e-5`, `true`, `["a", "b"]`) and fall back to plain strings.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::grpo::{GrpoConfig, SftConfig};
use crate::pipeline::{MockFaults, PipelineConfig};
use crate::retry::RetryPolicy;
use crate::reward::RewardConfig;

pub const ENV_PREFIX: &str = "SCENECOT_";

/// Top-level sections, in the order they appear in documentation.
pub const SECTIONS: [&str; 8] = ["endpoints", "reward", "scoring", "grpo", "sft", "train", "pipeline", "mock"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{origin}: unknown section {section:?} (expected one of {})", SECTIONS.join(", "))]
    UnknownSection { origin: String, section: String },
    #[error("{origin}: expected section.key, got {key:?}")]
    BadKey { origin: String, key: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub judge: Option<String>,
    pub generator: Option<String>,
    pub image_scorer: Option<String>,
    pub prompt_creator: Option<String>,
    pub extractor: Option<String>,
    pub abstractor: Option<String>,
    pub timeout_ms: u64,
    /// Retries after the first attempt.
    pub retries: u32,
    /// Backoff before retry `k` is `backoff_ms · 2^k`.
    pub backoff_ms: u64,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            judge: None,
            generator: None,
            image_scorer: None,
            prompt_creator: None,
            extractor: None,
            abstractor: None,
            timeout_ms: 30_000,
            retries: 2,
            backoff_ms: 200,
        }
    }
}

impl Endpoints {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { max_retries: self.retries, base_backoff: Duration::from_millis(self.backoff_ms) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    /// Use the built-in fixed-score mocks instead of `endpoints`.
    pub mock: bool,
    pub max_parallel: usize,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self { mock: false, max_parallel: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    /// GRPO steps for the toy task.
    pub steps: usize,
    /// SFT epochs.
    pub epochs: usize,
    /// JSONL dataset for SFT.
    pub data: Option<PathBuf>,
    /// Receives `curve.jsonl` and `checkpoint.json`.
    pub out_dir: PathBuf,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { seed: 0, steps: 2000, epochs: 3, data: None, out_dir: PathBuf::from("runs") }
    }
}

/// Behaviour of the built-in mock services.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSection {
    /// Judge scores as (perception, completeness, faithfulness).
    pub judge: [i64; 3],
    pub hps: f64,
    pub vlm: f64,
    /// Derive judge and image scores from a content hash instead.
    pub hashed: bool,
    pub faults: MockFaults,
}

impl Default for MockSection {
    fn default() -> Self {
        Self { judge: [2, 2, 2], hps: 1.0, vlm: 1.0, hashed: false, faults: MockFaults::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub endpoints: Endpoints,
    pub reward: RewardConfig,
    pub scoring: ScoringSection,
    /// GRPO settings for `train toy`. Defaults to [`GrpoConfig::toy`]; the
    /// library-level [`GrpoConfig::default`] keeps the large-model recipe.
    pub grpo: GrpoConfig,
    pub sft: SftConfig,
    pub train: TrainSection,
    pub pipeline: PipelineConfig,
    pub mock: MockSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            endpoints: Endpoints::default(),
            reward: RewardConfig::default(),
            scoring: ScoringSection::default(),
            grpo: GrpoConfig::toy(),
            sft: SftConfig::default(),
            train: TrainSection::default(),
            pipeline: PipelineConfig::default(),
            mock: MockSection::default(),
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.reward.validate().map_err(|e| ConfigError::Invalid(format!("reward: {e}")))?;
        self.grpo.validate().map_err(|e| ConfigError::Invalid(format!("grpo: {e}")))?;
        self.sft.validate().map_err(|e| ConfigError::Invalid(format!("sft: {e}")))?;
        self.pipeline.validate().map_err(|e| ConfigError::Invalid(format!("pipeline: {e}")))?;
        if self.scoring.max_parallel == 0 {
            return Err(ConfigError::Invalid("scoring: max_parallel must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses `SCENECOT_*` pairs from the process environment.
    pub fn process_env() -> Vec<(String, String)> {
        std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect()
    }
}

/// Reads a raw override value as a TOML literal, else as a string.
fn literal(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set(root: &mut Table, origin: &str, section: &str, key: &str, value: Value) -> Result<(), ConfigError> {
    if !SECTIONS.contains(&section) {
        return Err(ConfigError::UnknownSection { origin: origin.into(), section: section.into() });
    }
    if key.is_empty() {
        return Err(ConfigError::BadKey { origin: origin.into(), key: format!("{section}.") });
    }
    let table = root
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()))
        .as_table_mut()
        .ok_or_else(|| ConfigError::Invalid(format!("{origin}: {section} must be a table")))?;
    // dotted keys reach nested tables, e.g. mock.faults.extract
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cursor = table;
    for part in parts {
        cursor = cursor
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("{origin}: {section}.{part} must be a table")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

/// Builds the effective configuration.
///
/// * `file_text`: contents of the config file, if any.
/// * `env`: environment pairs; only names starting with `SCENECOT_` are
///   used. `SCENECOT_GRPO_CLIP_EPS=0.1` sets `grpo.clip_eps`.
/// * `flags`: `("section.key", raw value)` pairs from the command line.
pub fn resolve<I, K, V>(file_text: Option<&str>, env: I, flags: &[(String, String)]) -> Result<Config, ConfigError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut root: Table = match file_text {
        Some(text) => text.parse()?,
        None => Table::new(),
    };
    for section in root.keys() {
        if !SECTIONS.contains(&section.as_str()) {
            return Err(ConfigError::UnknownSection { origin: "config file".into(), section: section.clone() });
        }
    }

    let mut env: Vec<(String, String)> = env
        .into_iter()
        .filter_map(|(k, v)| k.as_ref().strip_prefix(ENV_PREFIX).map(|k| (k.to_string(), v.as_ref().to_string())))
        .collect();
    env.sort();
    for (name, raw) in env {
        let lower = name.to_ascii_lowercase();
        let origin = format!("{ENV_PREFIX}{name}");
        let (section, key) = lower.split_once('_').ok_or(ConfigError::BadKey { origin: origin.clone(), key: lower.clone() })?;
        set(&mut root, &origin, section, key, literal(&raw))?;
    }

    for (dotted, raw) in flags {
        let origin = format!("flag {dotted}");
        let (section, key) =
            dotted.split_once('.').ok_or(ConfigError::BadKey { origin: origin.clone(), key: dotted.clone() })?;
        set(&mut root, &origin, section, key, literal(raw))?;
    }

    // the merged table mixes every source, so no single origin can be named
    let config: Config = Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(format!("configuration: {}", e.to_string().split_whitespace().collect::<Vec<_>>().join(" "))))?;
    config.validate()?;
    Ok(config)
}
