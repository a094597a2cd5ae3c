use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::{compute_group_advantages, grpo_loss, sft_loss, LossError};
use super::policy::{Policy, PolicyError, TokenId, ToyPolicy};
use super::schedule::cosine_lr;
use super::tokenizer::{TokenizeError, ToyTokenizer, EOS};
use super::{GrpoConfig, SftConfig};
use crate::parser::{extract_tagged_sections, parse_structured_vision};
use crate::reward::{format_reward, RewardEngine, ScoringError};
use crate::vision::{render_rollout_target, CoTRecord, SchemaOptions, VisionError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("scoring failed: {0}")]
    Scoring(#[from] ScoringError),
    #[error("record {record_id}: {source}")]
    Tokenize { record_id: String, source: TokenizeError },
    #[error("record {record_id}: {source}")]
    Render { record_id: String, source: VisionError },
    #[error("no training records")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Turns completion texts into scalar rewards, one per completion.
pub trait RolloutScorer {
    fn score(&self, completions: &[String], user_prompt: &str) -> Result<Vec<f64>, TrainError>;
}

/// Reward = format reward only; never calls out.
#[derive(Debug, Clone, Default)]
pub struct FormatOnlyScorer {
    pub strict_json_schema: bool,
    pub schema: SchemaOptions,
}

impl RolloutScorer for FormatOnlyScorer {
    fn score(&self, completions: &[String], _user_prompt: &str) -> Result<Vec<f64>, TrainError> {
        Ok(completions
            .iter()
            .map(|text| {
                let tagged = extract_tagged_sections(text);
                let (report, _) = parse_structured_vision(&tagged, &self.schema);
                format_reward(&tagged, &report, self.strict_json_schema).r_format
            })
            .collect())
    }
}

/// Full gated reward through a [`RewardEngine`].
pub struct EngineScorer<'a> {
    pub engine: &'a RewardEngine,
    pub max_parallel: usize,
}

impl RolloutScorer for EngineScorer<'_> {
    fn score(&self, completions: &[String], user_prompt: &str) -> Result<Vec<f64>, TrainError> {
        self.engine
            .score_group(completions, user_prompt, self.max_parallel)
            .into_iter()
            .map(|r| r.map(|b| b.r_final).map_err(TrainError::from))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrompt {
    pub id: String,
    pub text: String,
    pub tokens: Vec<TokenId>,
}

impl TaskPrompt {
    pub fn from_text(id: impl Into<String>, text: &str) -> Result<Self, TokenizeError> {
        Ok(Self { id: id.into(), text: text.to_string(), tokens: ToyTokenizer.encode(text)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepContext {
    pub step: usize,
    pub total_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_advantage: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// One line of a training-curve JSONL file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

impl From<StepReport> for CurvePoint {
    fn from(r: StepReport) -> Self {
        Self { step: r.step, mean_reward: r.mean_reward, loss: r.loss, grad_norm: r.grad_norm, lr: r.lr }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

impl TrainingCurve {
    pub fn to_jsonl(&self) -> String {
        self.points.iter().map(|p| serde_json::to_string(p).expect("plain numbers") + "\n").collect()
    }

    pub fn final_mean_reward(&self) -> Option<f64> {
        self.points.last().map(|p| p.mean_reward)
    }

    /// Mean of the per-step mean rewards over the last `n` steps.
    pub fn tail_mean_reward(&self, n: usize) -> Option<f64> {
        let tail = &self.points[self.points.len().saturating_sub(n)..];
        (!tail.is_empty()).then(|| tail.iter().map(|p| p.mean_reward).sum::<f64>() / tail.len() as f64)
    }

    /// First step whose mean reward reaches `threshold`.
    pub fn first_step_reaching(&self, threshold: f64) -> Option<usize> {
        self.points.iter().find(|p| p.mean_reward >= threshold).map(|p| p.step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SftCurve {
    pub epochs: Vec<EpochPoint>,
}

impl SftCurve {
    /// True when every epoch's mean loss is below the previous one.
    pub fn strictly_decreasing(&self) -> bool {
        self.epochs.windows(2).all(|w| w[1].mean_loss < w[0].mean_loss)
    }

    pub fn to_jsonl(&self) -> String {
        self.epochs.iter().map(|p| serde_json::to_string(p).expect("plain numbers") + "\n").collect()
    }
}

/// splitmix64 folded over `parts`.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        state ^= p;
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

/// One GRPO update: sample a group per prompt, score every completion,
/// normalize rewards within each group, then take one gradient step on the
/// clipped surrogate with the KL penalty to `reference`.
///
/// All scoring happens before the parameters are touched, so a scoring
/// failure leaves the policy unchanged.
pub fn grpo_step<P: Policy + ?Sized, R: Policy + ?Sized>(
    policy: &mut P,
    reference: &R,
    prompts: &[TaskPrompt],
    scorer: &dyn RolloutScorer,
    config: &GrpoConfig,
    ctx: StepContext,
) -> Result<StepReport, TrainError> {
    config.validate().map_err(TrainError::Config)?;
    if prompts.is_empty() {
        return Err(TrainError::Config("grpo_step needs at least one prompt".into()));
    }
    let tokenizer = ToyTokenizer;

    let mut groups = Vec::with_capacity(prompts.len());
    for (j, prompt) in prompts.iter().enumerate() {
        let samples = (0..config.group_size)
            .map(|g| {
                let seed = mix_seed(&[ctx.seed, ctx.step as u64, j as u64, g as u64]);
                policy.sample(&prompt.tokens, config.max_len, seed)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let texts: Vec<String> = samples.iter().map(|s| tokenizer.decode(&s.tokens)).collect();
        let rewards = scorer.score(&texts, &prompt.text)?;
        groups.push((samples, rewards));
    }

    let lr = cosine_lr(config.lr, ctx.step, ctx.total_steps, config.min_lr_ratio);
    let scale = 1.0 / prompts.len() as f64;
    let mut grad = vec![0.0; policy.params().len()];
    let (mut loss_sum, mut reward_sum, mut adv_sum, mut count) = (0.0, 0.0, 0.0, 0usize);
    for (prompt, (samples, rewards)) in prompts.iter().zip(&groups) {
        let advantages = compute_group_advantages(rewards, config.std_eps)?;
        let old: Vec<Vec<f64>> = samples.iter().map(|s| s.logprobs.clone()).collect();
        let new = samples
            .iter()
            .map(|s| policy.logprobs(&prompt.tokens, &s.tokens))
            .collect::<Result<Vec<_>, _>>()?;
        let reference_lp = samples
            .iter()
            .map(|s| reference.logprobs(&prompt.tokens, &s.tokens))
            .collect::<Result<Vec<_>, _>>()?;
        let (loss, d_logprobs) = grpo_loss(&new, &old, &reference_lp, &advantages, config)?;
        for (s, d) in samples.iter().zip(&d_logprobs) {
            let upstream: Vec<f64> = d.iter().map(|x| x * scale).collect();
            let g = policy.logprob_vjp(&prompt.tokens, &s.tokens, &upstream)?;
            for (acc, x) in grad.iter_mut().zip(g) {
                *acc += x;
            }
        }
        loss_sum += loss * scale;
        reward_sum += rewards.iter().sum::<f64>();
        adv_sum += advantages.iter().sum::<f64>();
        count += rewards.len();
    }

    let grad_norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
        *p -= lr * g;
    }
    Ok(StepReport {
        step: ctx.step,
        mean_reward: reward_sum / count as f64,
        mean_advantage: adv_sum / count as f64,
        loss: loss_sum,
        grad_norm,
        lr,
    })
}

/// The built-in task: a fixed pool of 16 short prompts, rewarded by the
/// format reward alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub prompts: Vec<TaskPrompt>,
    pub init_scale: f64,
    pub position_buckets: usize,
}

impl Default for ToyTask {
    fn default() -> Self {
        let adjectives = ["red", "blue", "green", "small"];
        let nouns = ["cat", "dog", "tree", "house"];
        let prompts = adjectives
            .iter()
            .flat_map(|a| nouns.iter().map(move |n| format!("a {a} {n}")))
            .enumerate()
            .map(|(i, text)| TaskPrompt::from_text(format!("toy-{i:02}"), &text).expect("toy vocabulary"))
            .collect();
        Self { prompts, init_scale: 0.01, position_buckets: ToyPolicy::DEFAULT_POSITION_BUCKETS }
    }
}

impl ToyTask {
    pub fn initial_policy(&self, seed: u64) -> ToyPolicy {
        ToyPolicy::random(self.position_buckets, mix_seed(&[seed, 0x1417]), self.init_scale)
    }

    /// Prompts for `step`, rotating through the pool.
    pub fn prompts_for_step(&self, step: usize, count: usize) -> Vec<TaskPrompt> {
        (0..count).map(|k| self.prompts[(step * count + k) % self.prompts.len()].clone()).collect()
    }
}

/// Runs GRPO on the toy task from a freshly initialized policy, with the
/// initial policy frozen as the KL reference.
pub fn train_toy(
    config: &GrpoConfig,
    total_steps: usize,
    seed: u64,
) -> Result<(TrainingCurve, ToyPolicy), TrainError> {
    let task = ToyTask::default();
    let mut policy = task.initial_policy(seed);
    let reference = policy.clone();
    let scorer = FormatOnlyScorer::default();
    let mut curve = TrainingCurve::default();
    for step in 0..total_steps {
        let prompts = task.prompts_for_step(step, config.prompts_per_step);
        let report =
            grpo_step(&mut policy, &reference, &prompts, &scorer, config, StepContext { step, total_steps, seed })?;
        curve.points.push(report.into());
    }
    Ok((curve, policy))
}

struct SftExample {
    prompt: Vec<TokenId>,
    target: Vec<TokenId>,
}

fn sft_example(record: &CoTRecord) -> Result<SftExample, TrainError> {
    let tokenizer = ToyTokenizer;
    let rendered = render_rollout_target(record)
        .map_err(|source| TrainError::Render { record_id: record.record_id.clone(), source })?;
    let tokenize = |text: &str| {
        tokenizer.encode(text).map_err(|source| TrainError::Tokenize { record_id: record.record_id.clone(), source })
    };
    let prompt = tokenize(&record.user_prompt)?;
    let mut target = tokenize(&rendered)?;
    target.push(EOS);
    Ok(SftExample { prompt, target })
}

/// Toy tokenization of a record's supervised target, EOS included.
pub fn sft_target_len(record: &CoTRecord) -> Result<usize, TrainError> {
    Ok(sft_example(record)?.target.len())
}

/// Per-record gradient descent on the summed NLL of each rendered record.
/// Epoch loss is the mean of the per-record losses seen during the epoch.
pub fn train_sft<P: Policy + ?Sized>(
    policy: &mut P,
    records: &[CoTRecord],
    config: &SftConfig,
    epochs: usize,
    seed: u64,
) -> Result<SftCurve, TrainError> {
    config.validate().map_err(TrainError::Config)?;
    if records.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let examples = records.iter().map(sft_example).collect::<Result<Vec<_>, _>>()?;
    let total_steps = epochs * examples.len();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = SftCurve::default();
    let mut step = 0;
    for epoch in 0..epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, epoch as u64])));
        let mut total = 0.0;
        let mut lr = config.lr;
        for &i in &order {
            let ex = &examples[i];
            let (loss, grad) = sft_loss(policy, &ex.prompt, &ex.target)?;
            lr = cosine_lr(config.lr, step, total_steps, config.min_lr_ratio);
            for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            total += loss;
            step += 1;
        }
        curve.epochs.push(EpochPoint { epoch, mean_loss: total / examples.len() as f64, lr });
    }
    Ok(curve)
}
