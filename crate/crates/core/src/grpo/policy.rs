use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::tokenizer::{ToyTokenizer, EOS, TAG_TOKENS};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("token id {token} is outside the vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: usize },
    #[error("upstream gradient has {got} entries for a completion of {expected} tokens")]
    LengthMismatch { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, expected {expected}")]
    ParamCount { expected: usize, got: usize },
}

/// A completion together with the log-probabilities it was sampled under.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
}

/// A differentiable autoregressive token policy with a flat parameter
/// vector.
pub trait Policy {
    fn vocab_size(&self) -> usize;

    /// Token that ends a completion, if the policy has one.
    fn eos_token(&self) -> Option<TokenId>;

    /// Log-probabilities over the whole vocabulary for the next token.
    fn next_token_logprobs(&self, prompt: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>, PolicyError>;

    /// Per-token log-probabilities of `completion` given `prompt`.
    fn logprobs(&self, prompt: &[TokenId], completion: &[TokenId]) -> Result<Vec<f64>, PolicyError>;

    /// `Σ_t upstream[t] · ∂ logprob_t / ∂θ` for the tokens of `completion`.
    fn logprob_vjp(
        &self,
        prompt: &[TokenId],
        completion: &[TokenId],
        upstream: &[f64],
    ) -> Result<Vec<f64>, PolicyError>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Draws up to `max_len` tokens, stopping after EOS. Deterministic in
    /// `(parameters, seed)`.
    fn sample(&self, prompt: &[TokenId], max_len: usize, seed: u64) -> Result<Sample, PolicyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tokens = Vec::with_capacity(max_len);
        let mut logprobs = Vec::with_capacity(max_len);
        while tokens.len() < max_len {
            let lp = self.next_token_logprobs(prompt, &tokens)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut choice = lp.len() - 1;
            for (i, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    choice = i;
                    break;
                }
            }
            tokens.push(choice as TokenId);
            logprobs.push(lp[choice]);
            if Some(choice as TokenId) == self.eos_token() {
                break;
            }
        }
        Ok(Sample { tokens, logprobs })
    }
}

/// Log-linear toy policy. The logits for the token at completion position
/// `t` are the sum of three rows of one parameter matrix:
///
/// * a position row, `min(t, position_buckets - 1)`;
/// * a previous-token row, `position_buckets + prev`, where `prev` is the
///   preceding completion token, or the last prompt token at `t = 0`, or EOS
///   for an empty prompt;
/// * a tag-state row, `position_buckets + V + k`, where `k` counts the tag
///   literals already emitted in the completion, capped at 4.
///
/// The tag-state row lets one parameter express "a section is open" for
/// every token inside it, independent of the content.
///
/// The matrix has `(position_buckets + V + 5) × V` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    vocab_size: usize,
    position_buckets: usize,
    params: Vec<f64>,
}

impl ToyPolicy {
    pub const DEFAULT_POSITION_BUCKETS: usize = 87;
    /// Tag-state rows: 0, 1, 2, 3, or 4+ tag literals emitted.
    pub const TAG_STATES: usize = 5;

    /// All-zero parameters: the uniform distribution at every step.
    pub fn uniform(position_buckets: usize) -> Self {
        let vocab_size = ToyTokenizer::VOCAB_SIZE;
        assert!(position_buckets >= 1, "need at least one position bucket");
        let rows = position_buckets + vocab_size + Self::TAG_STATES;
        Self { vocab_size, position_buckets, params: vec![0.0; rows * vocab_size] }
    }

    /// Parameters drawn from `N(0, scale²)`-ish noise (uniform on
    /// `[-scale·√3, scale·√3]`, which has the same variance).
    pub fn random(position_buckets: usize, seed: u64, scale: f64) -> Self {
        let mut policy = Self::uniform(position_buckets);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half_width = scale * 3f64.sqrt();
        for p in &mut policy.params {
            *p = rng.gen_range(-1.0..=1.0) * half_width;
        }
        policy
    }

    pub fn from_params(position_buckets: usize, params: Vec<f64>) -> Result<Self, PolicyError> {
        let mut policy = Self::uniform(position_buckets);
        if params.len() != policy.params.len() {
            return Err(PolicyError::ParamCount { expected: policy.params.len(), got: params.len() });
        }
        policy.params = params;
        Ok(policy)
    }

    pub fn position_buckets(&self) -> usize {
        self.position_buckets
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check(&self, tokens: &[TokenId]) -> Result<(), PolicyError> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(&token) => Err(PolicyError::TokenOutOfRange { token, vocab_size: self.vocab_size }),
            None => Ok(()),
        }
    }

    fn rows(&self, prompt: &[TokenId], prefix: &[TokenId]) -> [usize; 3] {
        let t = prefix.len();
        let prev = prefix.last().or(prompt.last()).copied().unwrap_or(EOS) as usize;
        let tags = prefix.iter().filter(|tok| TAG_TOKENS.contains(tok)).count().min(Self::TAG_STATES - 1);
        [t.min(self.position_buckets - 1), self.position_buckets + prev, self.position_buckets + self.vocab_size + tags]
    }

    fn log_softmax_at(&self, rows: [usize; 3]) -> Vec<f64> {
        let v = self.vocab_size;
        let mut logits = vec![0.0; v];
        for row in rows {
            for (z, p) in logits.iter_mut().zip(&self.params[row * v..(row + 1) * v]) {
                *z += p;
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        logits.into_iter().map(|z| z - lse).collect()
    }
}

impl Policy for ToyPolicy {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos_token(&self) -> Option<TokenId> {
        Some(EOS)
    }

    fn next_token_logprobs(&self, prompt: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>, PolicyError> {
        self.check(prompt)?;
        self.check(prefix)?;
        Ok(self.log_softmax_at(self.rows(prompt, prefix)))
    }

    fn logprobs(&self, prompt: &[TokenId], completion: &[TokenId]) -> Result<Vec<f64>, PolicyError> {
        self.check(prompt)?;
        self.check(completion)?;
        Ok((0..completion.len())
            .map(|t| self.log_softmax_at(self.rows(prompt, &completion[..t]))[completion[t] as usize])
            .collect())
    }

    fn logprob_vjp(
        &self,
        prompt: &[TokenId],
        completion: &[TokenId],
        upstream: &[f64],
    ) -> Result<Vec<f64>, PolicyError> {
        self.check(prompt)?;
        self.check(completion)?;
        if upstream.len() != completion.len() {
            return Err(PolicyError::LengthMismatch { expected: completion.len(), got: upstream.len() });
        }
        let v = self.vocab_size;
        let mut grad = vec![0.0; self.params.len()];
        for (t, (&token, &g)) in completion.iter().zip(upstream).enumerate() {
            if g == 0.0 {
                continue;
            }
            let rows = self.rows(prompt, &completion[..t]);
            let lp = self.log_softmax_at(rows);
            // d logp[token] / d logit[k] = 1[k == token] - p[k]
            for row in rows {
                let slot = &mut grad[row * v..(row + 1) * v];
                for (k, l) in lp.iter().enumerate() {
                    slot[k] -= g * l.exp();
                }
                slot[token as usize] += g;
            }
        }
        Ok(grad)
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}
