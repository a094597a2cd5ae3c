use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::canonical::canonical_value;
use super::validate::state_from_value;
use super::{SchemaOptions, StructuredVisionState, Violation, ViolationKind, VisionError};

pub const STRUCTURE_VISION_OPEN: &str = "<structure vision>";
pub const STRUCTURE_VISION_CLOSE: &str = "</structure vision>";
pub const FINAL_PROMPT_OPEN: &str = "<final prompt>";
pub const FINAL_PROMPT_CLOSE: &str = "</final prompt>";

pub const TAG_LITERALS: [&str; 4] =
    [STRUCTURE_VISION_OPEN, STRUCTURE_VISION_CLOSE, FINAL_PROMPT_OPEN, FINAL_PROMPT_CLOSE];

const RECORD_KEYS: &[&str] = &[
    "record_id",
    "domain",
    "user_prompt",
    "thinking_text",
    "structured_vision",
    "generative_prompt",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Culture,
    Nature,
    Science,
    Metaphor,
    Spatial,
    Textual,
    Entity,
    Story,
}

impl Domain {
    pub const ALL: [Domain; 8] = [
        Domain::Culture,
        Domain::Nature,
        Domain::Science,
        Domain::Metaphor,
        Domain::Spatial,
        Domain::Textual,
        Domain::Entity,
        Domain::Story,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Culture => "culture",
            Domain::Nature => "nature",
            Domain::Science => "science",
            Domain::Metaphor => "metaphor",
            Domain::Spatial => "spatial",
            Domain::Textual => "textual",
            Domain::Entity => "entity",
            Domain::Story => "story",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|d| d.as_str()).collect()
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|d| *d == self).expect("member of ALL")
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = VisionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| VisionError::UnknownDomain { given: s.to_string() })
    }
}

/// One chain-of-thought sample: user prompt, thinking text, structured
/// vision and the generative prompt it resolves to.
#[derive(Debug, Clone, PartialEq)]
pub struct CoTRecord {
    pub record_id: String,
    pub domain: Domain,
    pub user_prompt: String,
    pub thinking_text: String,
    pub structured_vision: StructuredVisionState,
    pub generative_prompt: String,
}

/// Builds a record. The id is a content hash, so equal inputs always yield
/// the same id.
pub fn compose_cot(
    user_prompt: &str,
    thinking_text: &str,
    state: StructuredVisionState,
    generative_prompt: &str,
    domain: Domain,
) -> Result<CoTRecord, VisionError> {
    for (field, value) in [
        ("user_prompt", user_prompt),
        ("thinking_text", thinking_text),
        ("generative_prompt", generative_prompt),
    ] {
        if value.is_empty() {
            return Err(VisionError::EmptyField { field });
        }
    }
    state.check(&SchemaOptions::default())?;
    let record_id = content_id(domain, user_prompt, thinking_text, &state, generative_prompt);
    Ok(CoTRecord {
        record_id,
        domain,
        user_prompt: user_prompt.to_string(),
        thinking_text: thinking_text.to_string(),
        structured_vision: state,
        generative_prompt: generative_prompt.to_string(),
    })
}

fn content_value(
    domain: Domain,
    user_prompt: &str,
    thinking_text: &str,
    state: &StructuredVisionState,
    generative_prompt: &str,
) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("domain".into(), Value::String(domain.as_str().into()));
    m.insert("user_prompt".into(), Value::String(user_prompt.into()));
    m.insert("thinking_text".into(), Value::String(thinking_text.into()));
    m.insert("structured_vision".into(), canonical_value(state));
    m.insert("generative_prompt".into(), Value::String(generative_prompt.into()));
    m
}

/// First 128 bits of SHA-256 over the canonical JSON of the content fields.
pub(crate) fn content_id(
    domain: Domain,
    user_prompt: &str,
    thinking_text: &str,
    state: &StructuredVisionState,
    generative_prompt: &str,
) -> String {
    let text = Value::Object(content_value(domain, user_prompt, thinking_text, state, generative_prompt)).to_string();
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..16])
}

impl CoTRecord {
    /// Canonical single-line JSON, as stored in dataset files.
    pub fn to_canonical_json(&self) -> String {
        let mut m = content_value(
            self.domain,
            &self.user_prompt,
            &self.thinking_text,
            &self.structured_vision,
            &self.generative_prompt,
        );
        m.insert("record_id".into(), Value::String(self.record_id.clone()));
        Value::Object(m).to_string()
    }

    /// Parses and checks one stored record, including that `record_id`
    /// matches the content hash.
    pub fn from_json(text: &str) -> Result<Self, Vec<Violation>> {
        let value: Value = serde_json::from_str(text).map_err(|e| {
            vec![Violation { path: "$".into(), message: format!("malformed JSON: {e}"), kind: ViolationKind::Syntax }]
        })?;
        let Some(obj) = value.as_object() else {
            return Err(vec![Violation::schema("$", "record must be a JSON object")]);
        };
        let mut out = Vec::new();
        for key in obj.keys() {
            if !RECORD_KEYS.contains(&key.as_str()) {
                out.push(Violation::schema(format!("$.{key}"), "unknown key"));
            }
        }
        let mut string_field = |key: &str| -> Option<String> {
            match obj.get(key) {
                Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
                Some(Value::String(_)) => {
                    out.push(Violation::schema(format!("$.{key}"), format!("{key} must be non-empty")));
                    None
                }
                Some(_) => {
                    out.push(Violation::schema(format!("$.{key}"), "expected a string"));
                    None
                }
                None => {
                    out.push(Violation::schema(format!("$.{key}"), "missing required key"));
                    None
                }
            }
        };
        let record_id = string_field("record_id");
        let domain_text = string_field("domain");
        let user_prompt = string_field("user_prompt");
        let thinking_text = string_field("thinking_text");
        let generative_prompt = string_field("generative_prompt");

        let domain = domain_text.and_then(|d| match d.parse::<Domain>() {
            Ok(d) => Some(d),
            Err(e) => {
                out.push(Violation::schema("$.domain", e.to_string()));
                None
            }
        });
        let state = match obj.get("structured_vision") {
            None => {
                out.push(Violation::schema("$.structured_vision", "missing required key"));
                None
            }
            Some(v) => {
                let (state, structural) = state_from_value(v, "$.structured_vision");
                out.extend(structural);
                state.and_then(|s| {
                    let semantic: Vec<_> = s
                        .violations(&SchemaOptions::default())
                        .into_iter()
                        .map(|mut v| {
                            v.path = v.path.replacen('$', "$.structured_vision", 1);
                            v
                        })
                        .collect();
                    if semantic.is_empty() {
                        Some(s)
                    } else {
                        out.extend(semantic);
                        None
                    }
                })
            }
        };
        if !out.is_empty() {
            return Err(out);
        }
        let (record_id, domain, user_prompt, thinking_text, generative_prompt, state) = (
            record_id.expect("checked"),
            domain.expect("checked"),
            user_prompt.expect("checked"),
            thinking_text.expect("checked"),
            generative_prompt.expect("checked"),
            state.expect("checked"),
        );
        let expected = content_id(domain, &user_prompt, &thinking_text, &state, &generative_prompt);
        if expected != record_id {
            return Err(vec![Violation::schema(
                "$.record_id",
                format!("record_id {record_id} does not match content hash {expected}"),
            )]);
        }
        Ok(CoTRecord { record_id, domain, user_prompt, thinking_text, structured_vision: state, generative_prompt })
    }
}

/// The supervised target for a record: thinking text, then the canonical
/// state inside `<structure vision>` tags, then the generative prompt inside
/// `<final prompt>` tags. Content that already contains a tag literal is
/// rejected.
pub fn render_rollout_target(record: &CoTRecord) -> Result<String, VisionError> {
    let state = super::canonicalize(&record.structured_vision)?;
    for (field, text) in [
        ("thinking_text", record.thinking_text.as_str()),
        ("structured_vision", state.as_str()),
        ("generative_prompt", record.generative_prompt.as_str()),
    ] {
        if let Some(tag) = TAG_LITERALS.iter().find(|t| text.contains(*t)) {
            return Err(VisionError::TagCollision { field, tag });
        }
    }
    Ok(format!(
        "{}{STRUCTURE_VISION_OPEN}{state}{STRUCTURE_VISION_CLOSE}{FINAL_PROMPT_OPEN}{}{FINAL_PROMPT_CLOSE}",
        record.thinking_text, record.generative_prompt
    ))
}
