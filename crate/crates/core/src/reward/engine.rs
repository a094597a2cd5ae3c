use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::clients::{JudgeRequest, ScoringClients};
use super::{
    final_reward_with, format_reward, image_reward, understanding_reward, FormatComponents,
    ImageComponents, JudgeScores, RewardBreakdown, RewardConfig, RewardError, UnderstandingComponents,
};
use crate::parser::{extract_tagged_sections, parse_structured_vision};
use crate::retry::{ClientError, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Judge,
    Generate,
    ScoreImage,
}

/// What was known when scoring stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialBreakdown {
    pub format: FormatComponents,
    pub understanding: Option<UnderstandingComponents>,
    pub image: Option<ImageComponents>,
    pub gate_passed: bool,
    pub external_calls_made: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("{stage:?} call failed after {attempts} attempts: {source}")]
    External { stage: Stage, attempts: u32, source: ClientError, partial: Box<PartialBreakdown> },
    #[error("{stage:?} returned unusable scores: {source}")]
    Contract { stage: Stage, source: RewardError, partial: Box<PartialBreakdown> },
}

impl ScoringError {
    pub fn partial(&self) -> &PartialBreakdown {
        match self {
            ScoringError::External { partial, .. } | ScoringError::Contract { partial, .. } => partial,
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, ScoringError::External { .. })
    }
}

/// Scores rollouts against a set of external clients.
pub struct RewardEngine {
    clients: Arc<dyn ScoringClients>,
    config: RewardConfig,
    retry: RetryPolicy,
}

impl RewardEngine {
    pub fn new(clients: Arc<dyn ScoringClients>) -> Self {
        Self { clients, config: RewardConfig::default(), retry: RetryPolicy::default() }
    }

    pub fn with_config(mut self, config: RewardConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn config(&self) -> &RewardConfig {
        &self.config
    }

    /// Format reward first; only a rollout that passes the gate reaches the
    /// judge, the generator and the image scorer, one call each barring
    /// retries.
    pub fn score_rollout(&self, rollout_text: &str, user_prompt: &str) -> Result<RewardBreakdown, ScoringError> {
        let tagged = extract_tagged_sections(rollout_text);
        let (report, _) = parse_structured_vision(&tagged, &self.config.schema);
        let format = format_reward(&tagged, &report, self.config.strict_json_schema);
        let mut partial = PartialBreakdown {
            format,
            understanding: None,
            image: None,
            gate_passed: self.config.gate(&format),
            external_calls_made: 0,
        };
        if !partial.gate_passed {
            let r_final = final_reward_with(&format, None, None, &self.config).expect("gated out");
            return Ok(RewardBreakdown {
                format,
                understanding: None,
                image: None,
                gate_passed: false,
                r_final,
                external_calls_made: 0,
            });
        }

        let final_prompt = tagged.final_prompt().unwrap_or_default().to_string();
        if self.config.understanding {
            let request = JudgeRequest {
                user_prompt: user_prompt.to_string(),
                thinking_text: tagged.thinking_text().to_string(),
                structure_vision: tagged.structure_vision().unwrap_or_default().to_string(),
                final_prompt: final_prompt.clone(),
            };
            let raw = self.call(Stage::Judge, &mut partial, || self.clients.judge(&request))?;
            let scores = JudgeScores::clamped(raw.perception, raw.completeness, raw.faithfulness);
            partial.understanding = Some(understanding_reward(scores));
        }
        if self.config.image {
            let image_ref = self.call(Stage::Generate, &mut partial, || self.clients.generate(&final_prompt))?;
            let scores =
                self.call(Stage::ScoreImage, &mut partial, || self.clients.score_image(&image_ref, &final_prompt))?;
            match image_reward(scores.hps, scores.vlm) {
                Ok(image) => partial.image = Some(image),
                Err(source) => {
                    return Err(ScoringError::Contract { stage: Stage::ScoreImage, source, partial: Box::new(partial) })
                }
            }
        }

        let r_final = final_reward_with(&format, partial.understanding.as_ref(), partial.image.as_ref(), &self.config)
            .expect("enabled components are present");
        Ok(RewardBreakdown {
            format,
            understanding: partial.understanding,
            image: partial.image,
            gate_passed: true,
            r_final,
            external_calls_made: partial.external_calls_made,
        })
    }

    fn call<T>(
        &self,
        stage: Stage,
        partial: &mut PartialBreakdown,
        call: impl FnMut() -> Result<T, ClientError>,
    ) -> Result<T, ScoringError> {
        let (result, attempts) = self.retry.run(call);
        partial.external_calls_made += attempts;
        result.map_err(|source| ScoringError::External { stage, attempts, source, partial: Box::new(partial.clone()) })
    }

    /// Scores a batch, keeping input order. At most `max_parallel` rollouts
    /// (so at most that many external requests) are in flight at any time;
    /// a single-flight client forces sequential scoring.
    pub fn score_group(
        &self,
        rollouts: &[String],
        user_prompt: &str,
        max_parallel: usize,
    ) -> Vec<Result<RewardBreakdown, ScoringError>> {
        let workers = if self.clients.single_flight() { 1 } else { max_parallel.max(1) }.min(rollouts.len());
        if workers <= 1 {
            return rollouts.iter().map(|r| self.score_rollout(r, user_prompt)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<RewardBreakdown, ScoringError>>>> =
            Mutex::new((0..rollouts.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(rollout) = rollouts.get(i) else { break };
                    let result = self.score_rollout(rollout, user_prompt);
                    slots.lock().expect("poisoned")[i] = Some(result);
                });
            }
        });
        slots.into_inner().expect("poisoned").into_iter().map(|r| r.expect("every slot filled")).collect()
    }
}
