//! Blocking JSON-over-HTTP transport shared by the service adapters.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::retry::ClientError;

#[derive(Debug, Clone)]
pub struct JsonClient {
    inner: reqwest::blocking::Client,
}

impl JsonClient {
    pub fn new(timeout: Duration) -> Result<Self, ClientError> {
        let inner = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self { inner })
    }

    /// POSTs `body` as JSON to `base` + `path` and decodes the JSON reply.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, base: &str, path: &str, body: &B) -> Result<R, ClientError> {
        let url = format!("{}{}", base.trim_end_matches('/'), path);
        let response = self
            .inner
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| ClientError::Transport(format!("{url}: {e}")))?;
        let status = response.status();
        let text = response.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Status { status: status.as_u16(), body: text });
        }
        serde_json::from_str(&text).map_err(|e| ClientError::Decode(format!("{url}: {e}")))
    }
}
