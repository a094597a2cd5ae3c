//! Retry with exponential backoff for external service calls.

use std::time::Duration;

use thiserror::Error;

/// Failure talking to an external service.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("endpoint not configured: {0}")]
    NotConfigured(&'static str),
    #[error("{0}")]
    Injected(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub max_retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, base_backoff: Duration::from_millis(200) }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        Self { max_retries, base_backoff: Duration::ZERO }
    }

    pub fn backoff(&self, retry: u32) -> Duration {
        self.base_backoff.saturating_mul(1u32 << retry.min(16))
    }

    /// Runs `call` until it succeeds or the retries are spent. Returns the
    /// outcome and the number of attempts made.
    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, ClientError>) -> (Result<T, ClientError>, u32) {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match call() {
                Ok(v) => return (Ok(v), attempts),
                Err(e) if attempts > self.max_retries => return (Err(e), attempts),
                Err(_) => {
                    let wait = self.backoff(attempts - 1);
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                }
            }
        }
    }
}
