use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde_json::{Map, Value};

use super::{
    Attribute, Entity, Region, Relation, SchemaOptions, StructuredVisionState, ValidationReport,
    Violation, ViolationKind,
};

const STATE_KEYS: &[&str] = &["entities", "relations", "layout", "global_style"];
const ENTITY_KEYS: &[&str] = &["id", "name", "attributes", "count"];
const RELATION_KEYS: &[&str] = &["subject", "predicate", "object"];
const REGION_KEYS: &[&str] = &["x0", "y0", "x1", "y1", "depth"];

/// Validates arbitrary text against the structured-vision schema with the
/// default options. Never fails: every problem lands in the report.
pub fn validate_state(raw_json_text: &str) -> ValidationReport {
    validate_state_with(raw_json_text, &SchemaOptions::default())
}

pub fn validate_state_with(raw_json_text: &str, options: &SchemaOptions) -> ValidationReport {
    parse_state(raw_json_text, options).0
}

/// Validates and, when valid, returns the typed state.
pub fn parse_state(
    raw_json_text: &str,
    options: &SchemaOptions,
) -> (ValidationReport, Option<StructuredVisionState>) {
    let value: Value = match serde_json::from_str(raw_json_text) {
        Ok(v) => v,
        Err(e) => {
            let violation = Violation {
                path: "$".to_string(),
                message: format!("malformed JSON: {e}"),
                kind: ViolationKind::Syntax,
            };
            return (ValidationReport::from_violations(vec![violation]), None);
        }
    };
    let (state, mut violations) = state_from_value(&value, "$");
    match state {
        Some(state) => {
            violations.extend(typed_violations(&state, options));
            if violations.is_empty() {
                (ValidationReport::ok(), Some(state))
            } else {
                (ValidationReport::from_violations(violations), None)
            }
        }
        None => (ValidationReport::from_violations(violations), None),
    }
}

/// Structural pass: JSON types, required and unknown keys. Returns the typed
/// state only when the structure is sound.
pub(crate) fn state_from_value(
    value: &Value,
    path: &str,
) -> (Option<StructuredVisionState>, Vec<Violation>) {
    let mut out = Vec::new();
    let Some(obj) = value.as_object() else {
        out.push(Violation::schema(path, "structured vision must be a JSON object"));
        return (None, out);
    };
    reject_unknown(obj, STATE_KEYS, path, &mut out);

    let entities = match obj.get("entities") {
        None => {
            out.push(Violation::schema(format!("{path}.entities"), "missing required key"));
            None
        }
        Some(v) => parse_array(v, &format!("{path}.entities"), &mut out, parse_entity),
    };
    let relations = match obj.get("relations") {
        None => Some(Vec::new()),
        Some(v) => parse_array(v, &format!("{path}.relations"), &mut out, parse_relation),
    };
    let layout = match obj.get("layout") {
        None => Some(BTreeMap::new()),
        Some(v) => parse_layout(v, &format!("{path}.layout"), &mut out),
    };
    let global_style = match obj.get("global_style") {
        None | Some(Value::Null) => Some(None),
        Some(Value::String(s)) => Some(Some(s.clone())),
        Some(_) => {
            out.push(Violation::schema(
                format!("{path}.global_style"),
                "global_style must be a string or null",
            ));
            None
        }
    };

    match (entities, relations, layout, global_style) {
        (Some(entities), Some(relations), Some(layout), Some(global_style)) if out.is_empty() => {
            (Some(StructuredVisionState { entities, relations, layout, global_style }), out)
        }
        _ => (None, out),
    }
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], path: &str, out: &mut Vec<Violation>) {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            out.push(Violation::schema(child_key(path, key), "unknown key"));
        }
    }
}

fn parse_array<T>(
    value: &Value,
    path: &str,
    out: &mut Vec<Violation>,
    item: fn(&Value, &str, &mut Vec<Violation>) -> Option<T>,
) -> Option<Vec<T>> {
    let Some(items) = value.as_array() else {
        out.push(Violation::schema(path, "expected an array"));
        return None;
    };
    let mut parsed = Vec::with_capacity(items.len());
    let mut ok = true;
    for (i, v) in items.iter().enumerate() {
        match item(v, &format!("{path}[{i}]"), out) {
            Some(x) => parsed.push(x),
            None => ok = false,
        }
    }
    ok.then_some(parsed)
}

fn required_string(obj: &Map<String, Value>, key: &str, path: &str, out: &mut Vec<Violation>) -> Option<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            out.push(Violation::schema(child_key(path, key), "expected a string"));
            None
        }
        None => {
            out.push(Violation::schema(child_key(path, key), "missing required key"));
            None
        }
    }
}

fn parse_entity(value: &Value, path: &str, out: &mut Vec<Violation>) -> Option<Entity> {
    let Some(obj) = value.as_object() else {
        out.push(Violation::schema(path, "entity must be an object"));
        return None;
    };
    let before = out.len();
    reject_unknown(obj, ENTITY_KEYS, path, out);
    let id = required_string(obj, "id", path, out);
    let name = required_string(obj, "name", path, out);
    let count = match obj.get("count") {
        None => Some(1),
        Some(v) => match v.as_u64() {
            Some(n) => Some(n),
            None => {
                out.push(Violation::schema(format!("{path}.count"), "count must be a positive integer"));
                None
            }
        },
    };
    let attributes = match obj.get("attributes") {
        None => Some(Vec::new()),
        Some(v) => parse_array(v, &format!("{path}.attributes"), out, parse_attribute),
    };
    if out.len() != before {
        return None;
    }
    Some(Entity { id: id?, name: name?, attributes: attributes?, count: count? })
}

fn parse_attribute(value: &Value, path: &str, out: &mut Vec<Violation>) -> Option<Attribute> {
    match value.as_array().map(Vec::as_slice) {
        Some([Value::String(k), Value::String(v)]) => Some(Attribute::new(k.clone(), v.clone())),
        _ => {
            out.push(Violation::schema(path, "attribute must be a [key, value] pair of strings"));
            None
        }
    }
}

fn parse_relation(value: &Value, path: &str, out: &mut Vec<Violation>) -> Option<Relation> {
    let Some(obj) = value.as_object() else {
        out.push(Violation::schema(path, "relation must be an object"));
        return None;
    };
    let before = out.len();
    reject_unknown(obj, RELATION_KEYS, path, out);
    let subject = required_string(obj, "subject", path, out);
    let predicate = required_string(obj, "predicate", path, out);
    let object = required_string(obj, "object", path, out);
    if out.len() != before {
        return None;
    }
    Some(Relation { subject: subject?, predicate: predicate?, object: object? })
}

fn parse_layout(value: &Value, path: &str, out: &mut Vec<Violation>) -> Option<BTreeMap<String, Region>> {
    let Some(obj) = value.as_object() else {
        out.push(Violation::schema(path, "layout must be an object keyed by entity id"));
        return None;
    };
    let mut layout = BTreeMap::new();
    let mut ok = true;
    for (key, v) in obj {
        match parse_region(v, &child_key(path, key), out) {
            Some(r) => {
                layout.insert(key.clone(), r);
            }
            None => ok = false,
        }
    }
    ok.then_some(layout)
}

fn parse_region(value: &Value, path: &str, out: &mut Vec<Violation>) -> Option<Region> {
    let Some(obj) = value.as_object() else {
        out.push(Violation::schema(path, "region must be an object"));
        return None;
    };
    let before = out.len();
    reject_unknown(obj, REGION_KEYS, path, out);
    let mut coord = |key: &str| match obj.get(key) {
        Some(v) if v.is_number() => v.as_f64(),
        Some(_) => {
            out.push(Violation::schema(child_key(path, key), "expected a number"));
            None
        }
        None => {
            out.push(Violation::schema(child_key(path, key), "missing required key"));
            None
        }
    };
    let (x0, y0, x1, y1) = (coord("x0"), coord("y0"), coord("x1"), coord("y1"));
    let depth = match obj.get("depth") {
        Some(v) => match v.as_u64().and_then(|d| u32::try_from(d).ok()) {
            Some(d) => Some(d),
            None => {
                out.push(Violation::schema(
                    format!("{path}.depth"),
                    "depth must be a non-negative integer",
                ));
                None
            }
        },
        None => {
            out.push(Violation::schema(format!("{path}.depth"), "missing required key"));
            None
        }
    };
    if out.len() != before {
        return None;
    }
    Some(Region { x0: x0?, y0: y0?, x1: x1?, y1: y1?, depth: depth? })
}

pub(crate) fn is_valid_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

fn is_plain_key(key: &str) -> bool {
    !key.is_empty() && key.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

pub(crate) fn child_key(path: &str, key: &str) -> String {
    if is_plain_key(key) {
        format!("{path}.{key}")
    } else {
        format!("{path}[{}]", Value::String(key.to_string()))
    }
}

fn unit_interval(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

/// Semantic invariants on an already well-typed state.
pub(crate) fn typed_violations(state: &StructuredVisionState, options: &SchemaOptions) -> Vec<Violation> {
    let mut out = Vec::new();
    if state.entities.is_empty() {
        out.push(Violation::schema("$.entities", "at least one entity is required"));
    }

    let mut seen = HashSet::new();
    for (i, e) in state.entities.iter().enumerate() {
        let path = format!("$.entities[{i}]");
        if !is_valid_id(&e.id) {
            out.push(Violation::schema(format!("{path}.id"), "id must match [a-z0-9_]+"));
        } else if !seen.insert(e.id.as_str()) {
            out.push(Violation::schema(format!("{path}.id"), format!("duplicate entity id {:?}", e.id)));
        }
        if e.name.is_empty() {
            out.push(Violation::schema(format!("{path}.name"), "name must be non-empty"));
        }
        if e.count < 1 {
            out.push(Violation::schema(format!("{path}.count"), "count must be at least 1"));
        }
        let mut keys = HashSet::new();
        for (j, a) in e.attributes.iter().enumerate() {
            if !keys.insert(a.key.as_str()) {
                out.push(Violation::schema(
                    format!("{path}.attributes[{j}]"),
                    format!("duplicate attribute key {:?}", a.key),
                ));
            }
        }
    }

    let ids: HashSet<&str> = state.entities.iter().map(|e| e.id.as_str()).collect();
    for (i, r) in state.relations.iter().enumerate() {
        let path = format!("$.relations[{i}]");
        let mut dangling = false;
        if !ids.contains(r.subject.as_str()) {
            out.push(Violation::schema(format!("{path}.subject"), format!("unknown entity id {:?}", r.subject)));
            dangling = true;
        }
        if !ids.contains(r.object.as_str()) {
            out.push(Violation::schema(format!("{path}.object"), format!("unknown entity id {:?}", r.object)));
            dangling = true;
        }
        if r.predicate.is_empty() {
            out.push(Violation::schema(format!("{path}.predicate"), "predicate must be non-empty"));
        }
        if !dangling && r.subject == r.object && !options.allows_reflexive(&r.predicate) {
            out.push(Violation::schema(
                path,
                format!("reflexive relation with predicate {:?} is not allowed", r.predicate),
            ));
        }
    }

    for (key, region) in &state.layout {
        let path = child_key("$.layout", key);
        if !ids.contains(key.as_str()) {
            out.push(Violation::schema(path.clone(), format!("layout key {key:?} is not an entity id")));
        }
        for (name, v) in [("x0", region.x0), ("y0", region.y0), ("x1", region.x1), ("y1", region.y1)] {
            if !unit_interval(v) {
                out.push(Violation::schema(format!("{path}.{name}"), "coordinate must lie in [0, 1]"));
            }
        }
        if region.x0.partial_cmp(&region.x1) != Some(Ordering::Less) {
            out.push(Violation::schema(path.clone(), "x0 must be strictly less than x1"));
        }
        if region.y0.partial_cmp(&region.y1) != Some(Ordering::Less) {
            out.push(Violation::schema(path.clone(), "y0 must be strictly less than y1"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"entities":[{"id":"cat_1","name":"cat","count":1}],"relations":[],
            "layout":{"cat_1":{"x0":0.1,"y0":0.1,"x1":0.9,"y1":0.9,"depth":0}}}"#
    }

    #[test]
    fn minimal_state_is_valid() {
        let report = validate_state(minimal());
        assert!(report.valid, "{report:?}");
        assert!(report.violations.is_empty());
    }

    #[test]
    fn malformed_json_reports_root() {
        let report = validate_state("{");
        assert!(!report.valid);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].path, "$");
        assert_eq!(report.violations[0].kind, ViolationKind::Syntax);
        assert!(report.violations[0].message.contains("malformed JSON"));
    }

    #[test]
    fn dangling_relation_object() {
        let raw = r#"{"entities":[{"id":"cat_1","name":"cat"}],
            "relations":[{"subject":"cat_1","predicate":"near","object":"dog_2"}]}"#;
        let report = validate_state(raw);
        assert!(!report.valid);
        assert!(report.well_formed());
        assert!(report.violations.iter().any(|v| v.path == "$.relations[0].object"), "{report:?}");
    }

    #[test]
    fn unknown_keys_rejected_everywhere() {
        let raw = r#"{"entities":[{"id":"a","name":"a","colour":"red"}],"extra":1,
            "layout":{"a":{"x0":0,"y0":0,"x1":1,"y1":1,"depth":0,"z":3}}}"#;
        let paths: Vec<_> = validate_state(raw).violations.into_iter().map(|v| v.path).collect();
        assert!(paths.contains(&"$.extra".to_string()));
        assert!(paths.contains(&"$.entities[0].colour".to_string()));
        assert!(paths.contains(&"$.layout.a.z".to_string()));
    }

    #[test]
    fn reflexive_relations_follow_allow_list() {
        let raw = r#"{"entities":[{"id":"a","name":"mirror"}],
            "relations":[{"subject":"a","predicate":"reflects","object":"a"}]}"#;
        let report = validate_state(raw);
        assert_eq!(report.violations[0].path, "$.relations[0]");
        let options = SchemaOptions { reflexive_predicates: vec!["reflects".into()] };
        assert!(validate_state_with(raw, &options).valid);
    }

    #[test]
    fn region_geometry_checked() {
        let raw = r#"{"entities":[{"id":"a","name":"a"}],
            "layout":{"a":{"x0":0.5,"y0":0.0,"x1":0.5,"y1":1.2,"depth":-1}}}"#;
        let report = validate_state(raw);
        // depth is structurally wrong, so geometry is not reached
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].path, "$.layout.a.depth");

        let raw = r#"{"entities":[{"id":"a","name":"a"}],
            "layout":{"a":{"x0":0.5,"y0":0.0,"x1":0.5,"y1":1.2,"depth":2}}}"#;
        let paths: Vec<_> = validate_state(raw).violations.into_iter().map(|v| v.path).collect();
        assert!(paths.contains(&"$.layout.a.y1".to_string()));
        assert!(paths.contains(&"$.layout.a".to_string()));
    }

    #[test]
    fn entity_invariants() {
        let raw = r#"{"entities":[{"id":"Cat","name":"","count":0},{"id":"b","name":"b",
            "attributes":[["color","red"],["color","blue"]]},{"id":"b","name":"c"}]}"#;
        let paths: Vec<_> = validate_state(raw).violations.into_iter().map(|v| v.path).collect();
        assert_eq!(
            paths,
            vec![
                "$.entities[0].id",
                "$.entities[0].name",
                "$.entities[0].count",
                "$.entities[1].attributes[1]",
                "$.entities[2].id",
            ]
        );
    }

    #[test]
    fn empty_entities_and_non_object_root() {
        assert_eq!(validate_state(r#"{"entities":[]}"#).violations[0].path, "$.entities");
        assert_eq!(validate_state("[1,2]").violations[0].path, "$");
        assert_eq!(validate_state("{}").violations[0].path, "$.entities");
    }

    #[test]
    fn odd_layout_keys_are_quoted_in_paths() {
        let raw = r#"{"entities":[{"id":"a","name":"a"}],
            "layout":{"no such":{"x0":0,"y0":0,"x1":1,"y1":1,"depth":0}}}"#;
        let report = validate_state(raw);
        assert_eq!(report.violations[0].path, r#"$.layout["no such"]"#);
    }

    #[test]
    fn style_never_affects_validity() {
        let raw = r#"{"entities":[{"id":"a","name":"a"}],"global_style":"watercolor"}"#;
        let (report, state) = parse_state(raw, &SchemaOptions::default());
        assert!(report.valid);
        assert_eq!(state.unwrap().global_style.as_deref(), Some("watercolor"));
        assert!(validate_state(r#"{"entities":[{"id":"a","name":"a"}],"global_style":null}"#).valid);
    }
}
