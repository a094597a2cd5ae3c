//! Structured visual state: entities, relations and spatial layout, plus the
//! chain-of-thought record that carries one such state alongside the prompts
//! and thinking text it was derived from.
//!
//! Everything here is immutable once built and every operation is a pure
//! function, so the types can be shared freely between threads.

mod canonical;
mod record;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use canonical::canonicalize;
pub use canonical::canonicalize_with;
pub use record::{
    compose_cot, render_rollout_target, CoTRecord, Domain, FINAL_PROMPT_CLOSE, FINAL_PROMPT_OPEN,
    STRUCTURE_VISION_CLOSE, STRUCTURE_VISION_OPEN, TAG_LITERALS,
};
pub use validate::{parse_state, validate_state, validate_state_with};

/// Errors raised when a typed value fails its invariants.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VisionError {
    #[error("invariant violated at {path}: {message}")]
    Invariant { path: String, message: String },
    #[error("{field} must be non-empty")]
    EmptyField { field: &'static str },
    #[error("unknown domain {given:?}; valid domains are: {}", Domain::names().join(", "))]
    UnknownDomain { given: String },
    #[error("{field} contains the reserved tag literal {tag:?}")]
    TagCollision { field: &'static str, tag: &'static str },
    #[error("malformed record: {0}")]
    MalformedRecord(String),
}

/// One `(key, value)` attribute of an entity. Serialized as a two-element
/// JSON array so that the attribute order survives canonicalization.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Attribute {
    pub key: String,
    pub value: String,
}

impl Attribute {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        Self { key: key.into(), value: value.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    pub name: String,
    pub attributes: Vec<Attribute>,
    pub count: u64,
}

impl Entity {
    pub fn new(id: impl Into<String>, name: impl Into<String>) -> Self {
        Self { id: id.into(), name: name.into(), attributes: Vec::new(), count: 1 }
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.push(Attribute::new(key, value));
        self
    }

    pub fn with_count(mut self, count: u64) -> Self {
        self.count = count;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Relation {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Relation {
    pub fn new(
        subject: impl Into<String>,
        predicate: impl Into<String>,
        object: impl Into<String>,
    ) -> Self {
        Self { subject: subject.into(), predicate: predicate.into(), object: object.into() }
    }
}

/// Axis-aligned box on a normalized `[0,1]²` canvas. `depth` is a layer
/// index, 0 being the farthest layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub depth: u32,
}

impl Region {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64, depth: u32) -> Self {
        Self { x0, y0, x1, y1, depth }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredVisionState {
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    pub layout: BTreeMap<String, Region>,
    pub global_style: Option<String>,
}

impl StructuredVisionState {
    pub fn new(entities: Vec<Entity>) -> Self {
        Self { entities, relations: Vec::new(), layout: BTreeMap::new(), global_style: None }
    }

    pub fn with_relation(mut self, relation: Relation) -> Self {
        self.relations.push(relation);
        self
    }

    pub fn with_region(mut self, id: impl Into<String>, region: Region) -> Self {
        self.layout.insert(id.into(), region);
        self
    }

    pub fn with_style(mut self, style: impl Into<String>) -> Self {
        self.global_style = Some(style.into());
        self
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Copy with entities sorted by id and relations by
    /// `(subject, predicate, object)`: the shape a canonical round trip yields.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        out.entities.sort_by(|a, b| a.id.cmp(&b.id));
        out.relations.sort();
        out
    }

    /// All invariant violations of this state under `options`.
    pub fn violations(&self, options: &SchemaOptions) -> Vec<Violation> {
        validate::typed_violations(self, options)
    }

    pub fn check(&self, options: &SchemaOptions) -> Result<(), VisionError> {
        match self.violations(options).into_iter().next() {
            None => Ok(()),
            Some(v) => Err(VisionError::Invariant { path: v.path, message: v.message }),
        }
    }
}

/// Knobs for schema validation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaOptions {
    /// Predicates for which `subject == object` is permitted.
    pub reflexive_predicates: Vec<String>,
}

impl SchemaOptions {
    pub fn allows_reflexive(&self, predicate: &str) -> bool {
        self.reflexive_predicates.iter().any(|p| p == predicate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// The text is not well-formed JSON.
    Syntax,
    /// Well-formed JSON that breaks the schema or a state invariant.
    Schema,
    /// The section that should hold the state is absent.
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
    pub kind: ViolationKind,
}

impl Violation {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into(), kind: ViolationKind::Schema }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        Self { valid: violations.is_empty(), violations }
    }

    pub fn ok() -> Self {
        Self::from_violations(Vec::new())
    }

    /// True when the text parsed as JSON, whether or not the schema held.
    pub fn well_formed(&self) -> bool {
        !self.violations.iter().any(|v| matches!(v.kind, ViolationKind::Syntax | ViolationKind::Missing))
    }
}
