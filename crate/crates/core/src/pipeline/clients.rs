//! Service contracts for the four construction stages, a deterministic mock
//! and the HTTP adapter.
//!
//! * `POST {prompt_creator}/prompts` `{domain, n}` → `{prompts: [...]}`
//! * `POST {generator}/generate` `{prompt}` → `{image_ref}`
//! * `POST {extractor}/extract` `{image_ref}` → `{structured_vision}`, where the
//!   value is either the JSON text or the JSON object itself
//! * `POST {abstractor}/abstract` `{generative_prompt, image_ref}` →
//!   `{user_prompt, thinking_text}`

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::Endpoints;
use crate::http::JsonClient;
use crate::retry::ClientError;
use crate::vision::{canonicalize, Domain, Entity, Region, Relation, StructuredVisionState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Abstraction {
    pub user_prompt: String,
    pub thinking_text: String,
}

/// One implementation per deployment. Implementations must tolerate
/// concurrent calls unless `single_flight` returns true.
pub trait PipelineClients: Send + Sync {
    fn create_prompts(&self, domain: Domain, n: usize) -> Result<Vec<String>, ClientError>;

    fn generate(&self, prompt: &str) -> Result<String, ClientError>;

    /// Structured-vision JSON text for an image.
    fn extract(&self, image_ref: &str) -> Result<String, ClientError>;

    fn abstract_prompt(&self, generative_prompt: &str, image_ref: &str) -> Result<Abstraction, ClientError>;

    fn single_flight(&self) -> bool {
        false
    }
}

impl<T: PipelineClients + ?Sized> PipelineClients for Arc<T> {
    fn create_prompts(&self, domain: Domain, n: usize) -> Result<Vec<String>, ClientError> {
        (**self).create_prompts(domain, n)
    }
    fn generate(&self, prompt: &str) -> Result<String, ClientError> {
        (**self).generate(prompt)
    }
    fn extract(&self, image_ref: &str) -> Result<String, ClientError> {
        (**self).extract(image_ref)
    }
    fn abstract_prompt(&self, generative_prompt: &str, image_ref: &str) -> Result<Abstraction, ClientError> {
        (**self).abstract_prompt(generative_prompt, image_ref)
    }
    fn single_flight(&self) -> bool {
        (**self).single_flight()
    }
}

/// Prompts (by generative prompt text) on which a mock stage misbehaves.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockFaults {
    /// The generator fails on these prompts.
    pub generate: BTreeSet<String>,
    /// The extractor fails on images of these prompts.
    pub extract: BTreeSet<String>,
    /// The extractor returns the malformed text `{` for these prompts.
    pub bad_extract: BTreeSet<String>,
    /// The abstractor fails on these prompts.
    #[serde(rename = "abstract")]
    pub abstract_: BTreeSet<String>,
    /// The prompt creator fails for these domains.
    pub prompts: BTreeSet<Domain>,
}

/// A fixed answer for one generative prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    pub image_ref: String,
    pub structured_vision: String,
    pub user_prompt: String,
    pub thinking_text: String,
}

const MOCK_IMAGE_PREFIX: &str = "mock-image:";
const ADJECTIVES: [&str; 5] = ["red", "blue", "green", "small", "large"];
const NOUNS: [&str; 5] = ["cat", "dog", "tree", "house", "bird"];
const PREDICATES: [&str; 3] = ["near", "on", "under"];

/// Deterministic offline stand-in for all four services. Every string it
/// produces is inside the toy tokenizer's vocabulary, so mock datasets can
/// feed the toy SFT loop directly.
#[derive(Debug, Clone, Default)]
pub struct MockPipelineClients {
    pub faults: MockFaults,
    /// Overrides keyed by generative prompt.
    pub table: BTreeMap<String, MockEntry>,
}

impl MockPipelineClients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_faults(faults: MockFaults) -> Self {
        Self { faults, table: BTreeMap::new() }
    }

    pub fn with_entry(mut self, prompt: impl Into<String>, entry: MockEntry) -> Self {
        self.table.insert(prompt.into(), entry);
        self
    }

    /// The `i`-th prompt the mock creator emits for `domain`. Prompts are
    /// distinct across all domains: even `i` describe one object, odd `i`
    /// a pair joined by a spatial predicate.
    pub fn prompt_for(domain: Domain, i: usize) -> String {
        let k = domain.index() + Domain::ALL.len() * i;
        let (n_adj, n_noun) = (ADJECTIVES.len(), NOUNS.len());
        let adj = ADJECTIVES[k % n_adj];
        let noun_index = (k / n_adj) % n_noun;
        let noun = NOUNS[noun_index];
        let (mut prompt, variants) = if i.is_multiple_of(2) {
            (format!("a {adj} {noun}"), n_adj * n_noun)
        } else {
            let pred = PREDICATES[(k / (n_adj * n_noun)) % PREDICATES.len()];
            let shift = 1 + (k / (n_adj * n_noun * PREDICATES.len())) % (n_noun - 1);
            let other = NOUNS[(noun_index + shift) % n_noun];
            (format!("a {adj} {noun} {pred} the {other}"), n_adj * n_noun * PREDICATES.len() * (n_noun - 1))
        };
        for _ in 0..k / variants {
            prompt.push_str(" of the scene");
        }
        prompt
    }

    fn prompt_of_image(image_ref: &str) -> Result<String, ClientError> {
        image_ref
            .strip_prefix(MOCK_IMAGE_PREFIX)
            .and_then(|h| hex::decode(h).ok())
            .and_then(|b| String::from_utf8(b).ok())
            .ok_or_else(|| ClientError::Injected(format!("unknown image {image_ref:?}")))
    }

    fn entry_for_image(&self, image_ref: &str) -> Option<(&String, &MockEntry)> {
        self.table.iter().find(|(_, e)| e.image_ref == image_ref)
    }
}

/// Parsed form of a mock prompt: `a <adj> <noun> [<pred> the <noun>]`.
struct MockScene<'a> {
    adjective: Option<&'a str>,
    subject: &'a str,
    relation: Option<(&'a str, &'a str)>,
}

fn parse_mock_prompt(prompt: &str) -> MockScene<'_> {
    let words: Vec<&str> = prompt.split_whitespace().collect();
    let adjective = words.iter().copied().find(|w| ADJECTIVES.contains(w));
    let nouns: Vec<&str> = words.iter().copied().filter(|w| NOUNS.contains(w)).collect();
    let subject = nouns.first().copied().unwrap_or("scene");
    let relation = match (words.iter().copied().find(|w| PREDICATES.contains(w)), nouns.get(1)) {
        (Some(pred), Some(&object)) if object != subject => Some((pred, object)),
        _ => None,
    };
    MockScene { adjective, subject, relation }
}

fn mock_state(prompt: &str) -> StructuredVisionState {
    let scene = parse_mock_prompt(prompt);
    let mut subject = Entity::new(scene.subject, scene.subject);
    if let Some(adj) = scene.adjective {
        let key = if adj == "small" || adj == "large" { "size" } else { "color" };
        subject = subject.with_attribute(key, adj);
    }
    match scene.relation {
        None => StructuredVisionState::new(vec![subject]),
        Some((pred, object)) => StructuredVisionState::new(vec![subject, Entity::new(object, object)])
            .with_relation(Relation::new(scene.subject, pred, object))
            .with_region(scene.subject, Region::new(0.1, 0.5, 0.4, 0.9, 0))
            .with_region(object, Region::new(0.5, 0.2, 0.9, 0.9, 1)),
    }
}

fn mock_abstraction(prompt: &str) -> Abstraction {
    let scene = parse_mock_prompt(prompt);
    let adj = scene.adjective.map(|a| format!("{a} ")).unwrap_or_default();
    match scene.relation {
        None => Abstraction {
            user_prompt: format!("a {}", scene.subject),
            thinking_text: format!("the {adj}{}", scene.subject),
        },
        Some((pred, object)) => Abstraction {
            user_prompt: format!("a {} with a {object}", scene.subject),
            thinking_text: format!("the {adj}{} sits {pred} the {object}", scene.subject),
        },
    }
}

impl PipelineClients for MockPipelineClients {
    fn create_prompts(&self, domain: Domain, n: usize) -> Result<Vec<String>, ClientError> {
        if self.faults.prompts.contains(&domain) {
            return Err(ClientError::Injected(format!("prompt creator fault for {domain}")));
        }
        Ok((0..n).map(|i| Self::prompt_for(domain, i)).collect())
    }

    fn generate(&self, prompt: &str) -> Result<String, ClientError> {
        if self.faults.generate.contains(prompt) {
            return Err(ClientError::Injected(format!("generator fault for {prompt:?}")));
        }
        if let Some(entry) = self.table.get(prompt) {
            return Ok(entry.image_ref.clone());
        }
        Ok(format!("{MOCK_IMAGE_PREFIX}{}", hex::encode(prompt)))
    }

    fn extract(&self, image_ref: &str) -> Result<String, ClientError> {
        if let Some((_, entry)) = self.entry_for_image(image_ref) {
            return Ok(entry.structured_vision.clone());
        }
        let prompt = Self::prompt_of_image(image_ref)?;
        if self.faults.extract.contains(&prompt) {
            return Err(ClientError::Injected(format!("extractor fault for {prompt:?}")));
        }
        if self.faults.bad_extract.contains(&prompt) {
            return Ok("{".into());
        }
        Ok(canonicalize(&mock_state(&prompt)).expect("mock states satisfy the schema"))
    }

    fn abstract_prompt(&self, generative_prompt: &str, _image_ref: &str) -> Result<Abstraction, ClientError> {
        if self.faults.abstract_.contains(generative_prompt) {
            return Err(ClientError::Injected(format!("abstractor fault for {generative_prompt:?}")));
        }
        if let Some(entry) = self.table.get(generative_prompt) {
            return Ok(Abstraction { user_prompt: entry.user_prompt.clone(), thinking_text: entry.thinking_text.clone() });
        }
        Ok(mock_abstraction(generative_prompt))
    }
}

#[derive(Serialize)]
struct PromptsRequest {
    domain: Domain,
    n: usize,
}

#[derive(Deserialize)]
struct PromptsResponse {
    prompts: Vec<String>,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    image_ref: String,
}

#[derive(Serialize)]
struct ExtractRequest<'a> {
    image_ref: &'a str,
}

#[derive(Deserialize)]
struct ExtractResponse {
    structured_vision: serde_json::Value,
}

#[derive(Serialize)]
struct AbstractRequest<'a> {
    generative_prompt: &'a str,
    image_ref: &'a str,
}

#[derive(Debug, Clone)]
pub struct HttpPipelineClients {
    client: JsonClient,
    prompt_creator: Option<String>,
    generator: Option<String>,
    extractor: Option<String>,
    abstractor: Option<String>,
}

impl HttpPipelineClients {
    pub fn new(endpoints: &Endpoints) -> Result<Self, ClientError> {
        Ok(Self {
            client: JsonClient::new(endpoints.timeout())?,
            prompt_creator: endpoints.prompt_creator.clone(),
            generator: endpoints.generator.clone(),
            extractor: endpoints.extractor.clone(),
            abstractor: endpoints.abstractor.clone(),
        })
    }
}

fn base<'a>(url: &'a Option<String>, name: &'static str) -> Result<&'a str, ClientError> {
    url.as_deref().ok_or(ClientError::NotConfigured(name))
}

impl PipelineClients for HttpPipelineClients {
    fn create_prompts(&self, domain: Domain, n: usize) -> Result<Vec<String>, ClientError> {
        let r: PromptsResponse =
            self.client.post(base(&self.prompt_creator, "prompt_creator")?, "/prompts", &PromptsRequest { domain, n })?;
        Ok(r.prompts)
    }

    fn generate(&self, prompt: &str) -> Result<String, ClientError> {
        let r: GenerateResponse =
            self.client.post(base(&self.generator, "generator")?, "/generate", &GenerateRequest { prompt })?;
        Ok(r.image_ref)
    }

    fn extract(&self, image_ref: &str) -> Result<String, ClientError> {
        let r: ExtractResponse =
            self.client.post(base(&self.extractor, "extractor")?, "/extract", &ExtractRequest { image_ref })?;
        Ok(match r.structured_vision {
            serde_json::Value::String(text) => text,
            other => other.to_string(),
        })
    }

    fn abstract_prompt(&self, generative_prompt: &str, image_ref: &str) -> Result<Abstraction, ClientError> {
        self.client.post(
            base(&self.abstractor, "abstractor")?,
            "/abstract",
            &AbstractRequest { generative_prompt, image_ref },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grpo::ToyTokenizer;
    use crate::vision::validate_state;

    #[test]
    fn mock_prompts_are_unique_across_domains() {
        let mut all = BTreeSet::new();
        for domain in Domain::ALL {
            for prompt in MockPipelineClients::new().create_prompts(domain, 200).unwrap() {
                assert!(all.insert(prompt.clone()), "{domain}: {prompt}");
            }
        }
    }

    #[test]
    fn mock_outputs_are_valid_and_tokenizable() {
        let mock = MockPipelineClients::new();
        for domain in Domain::ALL {
            for prompt in mock.create_prompts(domain, 12).unwrap() {
                let image = mock.generate(&prompt).unwrap();
                let sv = mock.extract(&image).unwrap();
                assert!(validate_state(&sv).valid, "{prompt}: {sv}");
                let a = mock.abstract_prompt(&prompt, &image).unwrap();
                for text in [&prompt, &sv, &a.user_prompt, &a.thinking_text] {
                    ToyTokenizer.encode(text).unwrap_or_else(|e| panic!("{text}: {e}"));
                }
            }
        }
    }

    #[test]
    fn pair_prompts_become_relations() {
        let prompt = "a red cat near the tree";
        let state = mock_state(prompt);
        assert_eq!(state.entities.len(), 2);
        assert_eq!(state.relations, vec![Relation::new("cat", "near", "tree")]);
        assert_eq!(mock_abstraction(prompt).thinking_text, "the red cat sits near the tree");
    }

    #[test]
    fn faults_and_table_overrides() {
        let faults = MockFaults {
            extract: ["a red cat".to_string()].into(),
            bad_extract: ["a blue dog".to_string()].into(),
            ..MockFaults::default()
        };
        let entry = MockEntry {
            image_ref: "img-7".into(),
            structured_vision: r#"{"entities":[{"id":"x","name":"x"}]}"#.into(),
            user_prompt: "u".into(),
            thinking_text: "t".into(),
        };
        let mock = MockPipelineClients::with_faults(faults).with_entry("fixed", entry.clone());
        let image = mock.generate("a red cat").unwrap();
        assert!(matches!(mock.extract(&image), Err(ClientError::Injected(_))));
        assert_eq!(mock.extract(&mock.generate("a blue dog").unwrap()).unwrap(), "{");
        assert_eq!(mock.generate("fixed").unwrap(), "img-7");
        assert_eq!(mock.extract("img-7").unwrap(), entry.structured_vision);
        assert_eq!(mock.abstract_prompt("fixed", "img-7").unwrap().user_prompt, "u");
        assert!(mock.extract("not-an-image").is_err());
    }
}
