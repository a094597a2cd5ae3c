//! Judge, generator and image-scorer contracts, with deterministic mocks.

use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::retry::ClientError;

/// Body of `POST /judge`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub user_prompt: String,
    pub thinking_text: String,
    pub structure_vision: String,
    pub final_prompt: String,
}

/// Reply of `POST /judge`, before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawJudgeScores {
    pub perception: i64,
    pub completeness: i64,
    pub faithfulness: i64,
}

/// Reply of `POST /score`. Both values must already be in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub hps: f64,
    pub vlm: f64,
}

/// External services consulted once a rollout passes the format gate.
///
/// Implementations are called from several threads at once unless
/// [`ScoringClients::single_flight`] returns true.
pub trait ScoringClients: Send + Sync {
    fn judge(&self, request: &JudgeRequest) -> Result<RawJudgeScores, ClientError>;

    /// Generates an image for `prompt` and returns an opaque handle to it.
    fn generate(&self, prompt: &str) -> Result<String, ClientError>;

    fn score_image(&self, image_ref: &str, prompt: &str) -> Result<ImageScores, ClientError>;

    fn single_flight(&self) -> bool {
        false
    }
}

impl<T: ScoringClients + ?Sized> ScoringClients for Arc<T> {
    fn judge(&self, request: &JudgeRequest) -> Result<RawJudgeScores, ClientError> {
        (**self).judge(request)
    }
    fn generate(&self, prompt: &str) -> Result<String, ClientError> {
        (**self).generate(prompt)
    }
    fn score_image(&self, image_ref: &str, prompt: &str) -> Result<ImageScores, ClientError> {
        (**self).score_image(image_ref, prompt)
    }
    fn single_flight(&self) -> bool {
        (**self).single_flight()
    }
}

fn mock_image_ref(prompt: &str) -> String {
    format!("mock-image:{}", hex::encode(&Sha256::digest(prompt.as_bytes())[..8]))
}

/// Returns the same scores for every request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedScoringClients {
    pub judge: RawJudgeScores,
    pub scores: ImageScores,
}

impl FixedScoringClients {
    pub fn new(judge: [i64; 3], hps: f64, vlm: f64) -> Self {
        Self {
            judge: RawJudgeScores { perception: judge[0], completeness: judge[1], faithfulness: judge[2] },
            scores: ImageScores { hps, vlm },
        }
    }
}

impl Default for FixedScoringClients {
    fn default() -> Self {
        Self::new([2, 2, 2], 1.0, 1.0)
    }
}

impl ScoringClients for FixedScoringClients {
    fn judge(&self, _request: &JudgeRequest) -> Result<RawJudgeScores, ClientError> {
        Ok(self.judge)
    }
    fn generate(&self, prompt: &str) -> Result<String, ClientError> {
        Ok(mock_image_ref(prompt))
    }
    fn score_image(&self, _image_ref: &str, _prompt: &str) -> Result<ImageScores, ClientError> {
        Ok(self.scores)
    }
}

/// Scores derived from a SHA-256 of the request content: deterministic,
/// but different inputs get different values.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedScoringClients;

fn digest_of(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().into()
}

impl ScoringClients for HashedScoringClients {
    fn judge(&self, r: &JudgeRequest) -> Result<RawJudgeScores, ClientError> {
        let d = digest_of(&[&r.user_prompt, &r.thinking_text, &r.structure_vision, &r.final_prompt]);
        Ok(RawJudgeScores {
            perception: (d[0] % 3) as i64,
            completeness: (d[1] % 3) as i64,
            faithfulness: (d[2] % 3) as i64,
        })
    }
    fn generate(&self, prompt: &str) -> Result<String, ClientError> {
        Ok(mock_image_ref(prompt))
    }
    fn score_image(&self, image_ref: &str, prompt: &str) -> Result<ImageScores, ClientError> {
        let d = digest_of(&[image_ref, prompt]);
        Ok(ImageScores { hps: d[0] as f64 / 255.0, vlm: d[1] as f64 / 255.0 })
    }
}

/// Counts calls per endpoint and tracks how many were in flight at once.
#[derive(Debug, Default)]
pub struct CountingClients<C> {
    inner: C,
    pub judge_calls: AtomicU32,
    pub generate_calls: AtomicU32,
    pub score_calls: AtomicU32,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl<C> CountingClients<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            judge_calls: AtomicU32::new(0),
            generate_calls: AtomicU32::new(0),
            score_calls: AtomicU32::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn total_calls(&self) -> u32 {
        self.judge_calls.load(Ordering::SeqCst)
            + self.generate_calls.load(Ordering::SeqCst)
            + self.score_calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.judge_calls.store(0, Ordering::SeqCst);
        self.generate_calls.store(0, Ordering::SeqCst);
        self.score_calls.store(0, Ordering::SeqCst);
        self.max_in_flight.store(0, Ordering::SeqCst);
    }

    fn track<T>(&self, counter: &AtomicU32, call: impl FnOnce() -> T) -> T {
        counter.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let out = call();
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

impl<C: ScoringClients> ScoringClients for CountingClients<C> {
    fn judge(&self, request: &JudgeRequest) -> Result<RawJudgeScores, ClientError> {
        self.track(&self.judge_calls, || self.inner.judge(request))
    }
    fn generate(&self, prompt: &str) -> Result<String, ClientError> {
        self.track(&self.generate_calls, || self.inner.generate(prompt))
    }
    fn score_image(&self, image_ref: &str, prompt: &str) -> Result<ImageScores, ClientError> {
        self.track(&self.score_calls, || self.inner.score_image(image_ref, prompt))
    }
    fn single_flight(&self) -> bool {
        self.inner.single_flight()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Judge,
    Generate,
    ScoreImage,
}

/// Fails the first `failures` calls to one endpoint, then delegates.
#[derive(Debug)]
pub struct FlakyClients<C> {
    inner: C,
    endpoint: Endpoint,
    remaining: AtomicU32,
}

impl<C> FlakyClients<C> {
    pub fn new(inner: C, endpoint: Endpoint, failures: u32) -> Self {
        Self { inner, endpoint, remaining: AtomicU32::new(failures) }
    }

    fn maybe_fail(&self, endpoint: Endpoint) -> Result<(), ClientError> {
        if endpoint == self.endpoint
            && self.remaining.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok()
        {
            return Err(ClientError::Injected(format!("injected {endpoint:?} failure")));
        }
        Ok(())
    }
}

impl<C: ScoringClients> ScoringClients for FlakyClients<C> {
    fn judge(&self, request: &JudgeRequest) -> Result<RawJudgeScores, ClientError> {
        self.maybe_fail(Endpoint::Judge)?;
        self.inner.judge(request)
    }
    fn generate(&self, prompt: &str) -> Result<String, ClientError> {
        self.maybe_fail(Endpoint::Generate)?;
        self.inner.generate(prompt)
    }
    fn score_image(&self, image_ref: &str, prompt: &str) -> Result<ImageScores, ClientError> {
        self.maybe_fail(Endpoint::ScoreImage)?;
        self.inner.score_image(image_ref, prompt)
    }
    fn single_flight(&self) -> bool {
        self.inner.single_flight()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashed_mock_is_deterministic_and_in_range() {
        let req = JudgeRequest {
            user_prompt: "a".into(),
            thinking_text: "b".into(),
            structure_vision: "{}".into(),
            final_prompt: "c".into(),
        };
        let a = HashedScoringClients.judge(&req).unwrap();
        assert_eq!(a, HashedScoringClients.judge(&req).unwrap());
        for v in [a.perception, a.completeness, a.faithfulness] {
            assert!((0..=2).contains(&v));
        }
        let s = HashedScoringClients.score_image("img", "p").unwrap();
        assert!((0.0..=1.0).contains(&s.hps) && (0.0..=1.0).contains(&s.vlm));
    }

    #[test]
    fn flaky_fails_then_recovers() {
        let c = FlakyClients::new(FixedScoringClients::default(), Endpoint::Generate, 2);
        assert!(c.generate("x").is_err());
        assert!(c.generate("x").is_err());
        assert!(c.generate("x").is_ok());
        assert!(c.score_image("i", "x").is_ok());
    }

    #[test]
    fn judge_wire_names_are_exact() {
        let req = JudgeRequest {
            user_prompt: "u".into(),
            thinking_text: "t".into(),
            structure_vision: "s".into(),
            final_prompt: "f".into(),
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"user_prompt":"u","thinking_text":"t","structure_vision":"s","final_prompt":"f"}"#
        );
        let scores: RawJudgeScores =
            serde_json::from_str(r#"{"perception":2,"completeness":1,"faithfulness":0}"#).unwrap();
        assert_eq!(scores.completeness, 1);
    }
}
