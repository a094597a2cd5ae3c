//! HTTP adapters for the scoring services.
//!
//! * `POST {judge}/judge`      `{user_prompt, thinking_text, structure_vision, final_prompt}`
//!   → `{perception, completeness, faithfulness}`
//! * `POST {generator}/generate` `{prompt}` → `{image_ref}`
//! * `POST {image_scorer}/score` `{image_ref, prompt}` → `{hps, vlm}`, both already in `[0, 1]`

use serde::{Deserialize, Serialize};

use super::clients::{ImageScores, JudgeRequest, RawJudgeScores, ScoringClients};
use crate::config::Endpoints;
use crate::http::JsonClient;
use crate::retry::ClientError;

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    image_ref: String,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    image_ref: &'a str,
    prompt: &'a str,
}

#[derive(Debug, Clone)]
pub struct HttpScoringClients {
    client: JsonClient,
    judge: Option<String>,
    generator: Option<String>,
    image_scorer: Option<String>,
}

impl HttpScoringClients {
    pub fn new(endpoints: &Endpoints) -> Result<Self, ClientError> {
        Ok(Self {
            client: JsonClient::new(endpoints.timeout())?,
            judge: endpoints.judge.clone(),
            generator: endpoints.generator.clone(),
            image_scorer: endpoints.image_scorer.clone(),
        })
    }
}

fn base<'a>(url: &'a Option<String>, name: &'static str) -> Result<&'a str, ClientError> {
    url.as_deref().ok_or(ClientError::NotConfigured(name))
}

impl ScoringClients for HttpScoringClients {
    fn judge(&self, request: &JudgeRequest) -> Result<RawJudgeScores, ClientError> {
        self.client.post(base(&self.judge, "judge")?, "/judge", request)
    }

    fn generate(&self, prompt: &str) -> Result<String, ClientError> {
        let r: GenerateResponse =
            self.client.post(base(&self.generator, "generator")?, "/generate", &GenerateRequest { prompt })?;
        Ok(r.image_ref)
    }

    fn score_image(&self, image_ref: &str, prompt: &str) -> Result<ImageScores, ClientError> {
        self.client.post(base(&self.image_scorer, "image_scorer")?, "/score", &ScoreRequest { image_ref, prompt })
    }
}
