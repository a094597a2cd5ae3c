use serde_json::{json, Map, Value};

use super::{SchemaOptions, StructuredVisionState, VisionError};

/// Canonical compact JSON for a state: object keys sorted, entities sorted by
/// id, relations sorted by `(subject, predicate, object)`, attribute order
/// kept, no insignificant whitespace.
pub fn canonicalize(state: &StructuredVisionState) -> Result<String, VisionError> {
    canonicalize_with(state, &SchemaOptions::default())
}

pub fn canonicalize_with(state: &StructuredVisionState, options: &SchemaOptions) -> Result<String, VisionError> {
    state.check(options)?;
    Ok(canonical_value(state).to_string())
}

/// serde_json's default map is ordered by key, so serializing this value is
/// already canonical.
pub(crate) fn canonical_value(state: &StructuredVisionState) -> Value {
    let normalized = state.normalized();
    let entities: Vec<Value> = normalized
        .entities
        .iter()
        .map(|e| {
            let attributes: Vec<Value> =
                e.attributes.iter().map(|a| json!([a.key, a.value])).collect();
            json!({
                "id": e.id,
                "name": e.name,
                "attributes": attributes,
                "count": e.count,
            })
        })
        .collect();
    let relations: Vec<Value> = normalized
        .relations
        .iter()
        .map(|r| json!({"subject": r.subject, "predicate": r.predicate, "object": r.object}))
        .collect();
    let layout: Map<String, Value> = normalized
        .layout
        .iter()
        .map(|(k, r)| {
            (k.clone(), json!({"x0": r.x0, "y0": r.y0, "x1": r.x1, "y1": r.y1, "depth": r.depth}))
        })
        .collect();

    let mut root = Map::new();
    root.insert("entities".into(), Value::Array(entities));
    root.insert("relations".into(), Value::Array(relations));
    root.insert("layout".into(), Value::Object(layout));
    if let Some(style) = &normalized.global_style {
        root.insert("global_style".into(), Value::String(style.clone()));
    }
    Value::Object(root)
}
