//! Versioned JSON checkpoints for the toy policy.
//!
//! ```json
//! {"format":"scenecot-checkpoint","version":1,"kind":"grpo",
//!  "vocab_size":64,"position_buckets":87,"seed":0,
//!  "config":{...},"params":[...]}
//! ```
//!
//! `params` is the flat parameter vector in row-major order; each value is
//! written with the shortest representation that parses back to the same
//! `f64`, so a save/load round trip is bit-exact.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::{Policy, ToyPolicy};
use super::tokenizer::ToyTokenizer;

pub const FORMAT: &str = "scenecot-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint: format is {0:?}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint does not fit the toy policy: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Grpo,
    Sft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: CheckpointKind,
    pub vocab_size: usize,
    pub position_buckets: usize,
    pub seed: u64,
    /// The hyperparameters the run used, as written in the config file.
    pub config: serde_json::Value,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_policy<C: Serialize>(kind: CheckpointKind, policy: &ToyPolicy, seed: u64, config: &C) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            vocab_size: policy.vocab_size(),
            position_buckets: policy.position_buckets(),
            seed,
            config: serde_json::to_value(config).expect("configs serialize to JSON"),
            params: policy.params().to_vec(),
        }
    }

    pub fn to_policy(&self) -> Result<ToyPolicy, CheckpointError> {
        if self.vocab_size != ToyTokenizer::VOCAB_SIZE {
            return Err(CheckpointError::Shape(format!(
                "vocab_size {} but the toy tokenizer has {}",
                self.vocab_size,
                ToyTokenizer::VOCAB_SIZE
            )));
        }
        if self.position_buckets == 0 {
            return Err(CheckpointError::Shape("position_buckets must be positive".into()));
        }
        ToyPolicy::from_params(self.position_buckets, self.params.clone())
            .map_err(|e| CheckpointError::Shape(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(CheckpointError::Format(ck.format));
        }
        if ck.version != VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(CheckpointError::Shape("parameters contain non-finite values".into()));
        }
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
