//! Supervised fine-tuning and GRPO over an abstract token policy, plus a
//! small log-linear toy policy that makes both runnable on a laptop.

pub mod checkpoint;
mod loss;
pub mod policy;
mod schedule;
pub mod tokenizer;
mod train;

use serde::{Deserialize, Serialize};

pub use loss::{compute_group_advantages, grpo_loss, kl_estimate, sft_loss, LossError};
pub use policy::{Policy, PolicyError, Sample, TokenId, ToyPolicy};
pub use schedule::cosine_lr;
pub use tokenizer::{TokenizeError, ToyTokenizer, EOS};
pub use train::{
    grpo_step, sft_target_len, train_sft, train_toy, CurvePoint, EngineScorer, EpochPoint, FormatOnlyScorer, RolloutScorer,
    SftCurve, StepContext, StepReport, TaskPrompt, ToyTask, TrainError, TrainingCurve,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub lr: f64,
    pub std_eps: f64,
    /// Floor of the cosine schedule as a fraction of `lr`.
    pub min_lr_ratio: f64,
    /// Completions are cut at this many tokens.
    pub max_len: usize,
    /// Distinct prompts sampled per update.
    pub prompts_per_step: usize,
    /// Scoring parallelism inside a step.
    pub max_parallel: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 0.04,
            lr: 2e-5,
            std_eps: 1e-8,
            min_lr_ratio: 0.0,
            max_len: 16,
            prompts_per_step: 4,
            max_parallel: 1,
        }
    }
}

impl GrpoConfig {
    /// Settings used for the built-in toy task. The toy policy is a few
    /// thousand logits, so it needs a far larger step than an MLLM does.
    pub fn toy() -> Self {
        Self { lr: 10.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.group_size < 2 {
            return Err(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if self.kl_coef.is_nan() || self.kl_coef < 0.0 {
            return Err(format!("kl_coef must be non-negative, got {}", self.kl_coef));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return Err("min_lr_ratio must lie in [0, 1]".into());
        }
        if self.max_len == 0 || self.prompts_per_step == 0 || self.max_parallel == 0 {
            return Err("max_len, prompts_per_step and max_parallel must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub lr: f64,
    pub min_lr_ratio: f64,
    /// Position buckets of the toy policy trained from scratch.
    pub position_buckets: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self { lr: 5e-5, min_lr_ratio: 0.0, position_buckets: ToyPolicy::DEFAULT_POSITION_BUCKETS }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return Err("min_lr_ratio must lie in [0, 1]".into());
        }
        if self.position_buckets == 0 {
            return Err("position_buckets must be positive".into());
        }
        Ok(())
    }
}
