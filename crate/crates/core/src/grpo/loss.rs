use thiserror::Error;

use super::policy::{Policy, PolicyError, TokenId};
use super::GrpoConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Summed negative log-likelihood of `target` after `prompt`, and its
/// gradient with respect to the policy parameters.
pub fn sft_loss<P: Policy + ?Sized>(
    policy: &P,
    prompt: &[TokenId],
    target: &[TokenId],
) -> Result<(f64, Vec<f64>), LossError> {
    if target.is_empty() {
        return Err(LossError::EmptyTarget);
    }
    let logprobs = policy.logprobs(prompt, target)?;
    let loss = -logprobs.iter().sum::<f64>();
    let grad = policy.logprob_vjp(prompt, target, &vec![-1.0; target.len()])?;
    Ok((loss, grad))
}

/// `A_i = (r_i - mean(r)) / (std(r) + std_eps)` with the population
/// standard deviation. A constant group gets all-zero advantages.
pub fn compute_group_advantages(rewards: &[f64], std_eps: f64) -> Result<Vec<f64>, LossError> {
    if rewards.len() < 2 {
        return Err(LossError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + std_eps;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Per-token KL estimate `exp(Δ) - Δ - 1` with `Δ = lp_ref - lp_new`.
/// Non-negative, zero exactly when the two agree.
pub fn kl_estimate(lp_ref: f64, lp_new: f64) -> f64 {
    let delta = lp_ref - lp_new;
    delta.exp_m1() - delta
}

/// GRPO loss over one group:
///
/// ```text
/// ρ = exp(lp_new - lp_old)
/// s = min(ρ·A, clip(ρ, 1-ε, 1+ε)·A)
/// L = -mean_i mean_t (s - β·KL)
/// ```
///
/// Returns the loss and `∂L/∂lp_new` with the same shape as `logprobs_new`.
pub fn grpo_loss(
    logprobs_new: &[Vec<f64>],
    logprobs_old: &[Vec<f64>],
    logprobs_ref: &[Vec<f64>],
    advantages: &[f64],
    config: &GrpoConfig,
) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    let g = logprobs_new.len();
    if g == 0 || logprobs_old.len() != g || logprobs_ref.len() != g || advantages.len() != g {
        return Err(LossError::Shape(format!(
            "{} new, {} old, {} reference completions, {} advantages",
            g,
            logprobs_old.len(),
            logprobs_ref.len(),
            advantages.len()
        )));
    }
    let (lo, hi) = (1.0 - config.clip_eps, 1.0 + config.clip_eps);
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(g);
    for i in 0..g {
        let (new, old, reference) = (&logprobs_new[i], &logprobs_old[i], &logprobs_ref[i]);
        if old.len() != new.len() || reference.len() != new.len() {
            return Err(LossError::Shape(format!("completion {i} has mismatched token counts")));
        }
        let mut grad = vec![0.0; new.len()];
        if new.is_empty() {
            grads.push(grad);
            continue;
        }
        let a = advantages[i];
        let scale = 1.0 / (g as f64 * new.len() as f64);
        let mut sum = 0.0;
        for t in 0..new.len() {
            let ratio = (new[t] - old[t]).exp();
            let unclipped = ratio * a;
            let clipped = ratio.clamp(lo, hi) * a;
            let (surrogate, d_surrogate) =
                if unclipped <= clipped { (unclipped, unclipped) } else { (clipped, 0.0) };
            let delta = reference[t] - new[t];
            let kl = delta.exp_m1() - delta;
            let d_kl = 1.0 - delta.exp();
            sum += surrogate - config.kl_coef * kl;
            grad[t] = -scale * (d_surrogate - config.kl_coef * d_kl);
        }
        loss -= sum / (g as f64 * new.len() as f64);
        grads.push(grad);
    }
    Ok((loss, grads))
}
