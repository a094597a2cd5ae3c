//! The shipped schema documents and docs agree with the implementation.

use std::collections::BTreeSet;

use serde_json::Value;

use scenecot::pipeline::{run_pipeline, MockPipelineClients, PipelineConfig};
use scenecot::retry::RetryPolicy;
use scenecot::vision::{canonicalize, Domain, Entity, Region, Relation, StructuredVisionState, TAG_LITERALS};

fn load(name: &str) -> Value {
    let path = format!("{}/schema/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[test]
fn state_schema_lists_exactly_the_canonical_keys() {
    let schema = load("structured_vision.schema.json");
    let state = StructuredVisionState::new(vec![
        Entity::new("a", "cat").with_attribute("color", "red"),
        Entity::new("b", "mat"),
    ])
    .with_relation(Relation::new("a", "on", "b"))
    .with_region("a", Region::new(0.1, 0.2, 0.5, 0.6, 1))
    .with_style("photo");
    let canonical: Value = serde_json::from_str(&canonicalize(&state).unwrap()).unwrap();
    assert_eq!(keys(&canonical), keys(&schema["properties"]));
    assert_eq!(keys(&canonical["entities"][0]), keys(&schema["$defs"]["entity"]["properties"]));
    assert_eq!(keys(&canonical["relations"][0]), keys(&schema["$defs"]["relation"]["properties"]));
    assert_eq!(keys(&canonical["layout"]["a"]), keys(&schema["$defs"]["region"]["properties"]));
}

#[test]
fn record_schema_lists_exactly_the_dataset_fields() {
    let schema = load("cot_record.schema.json");
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig { per_domain: 1, output: dir.path().join("d.jsonl"), ..PipelineConfig::default() };
    run_pipeline(&cfg, &MockPipelineClients::new(), &RetryPolicy::immediate(0)).unwrap();
    let line = std::fs::read_to_string(&cfg.output).unwrap().lines().next().unwrap().to_string();
    let record: Value = serde_json::from_str(&line).unwrap();
    assert_eq!(keys(&record), keys(&schema["properties"]));
    let domains: Vec<&str> = schema["properties"]["domain"]["enum"].as_array().unwrap().iter().map(|d| d.as_str().unwrap()).collect();
    assert_eq!(domains, Domain::ALL.iter().map(|d| d.as_str()).collect::<Vec<_>>());
}

#[test]
fn reward_reference_quotes_the_tag_literals() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/rewards.md")).unwrap();
    for tag in TAG_LITERALS {
        assert!(doc.contains(&format!("`{tag}`")), "{tag} missing from docs/rewards.md");
    }
}

#[test]
fn config_reference_mentions_every_key() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.md")).unwrap();
    let defaults = toml::Value::try_from(scenecot::config::Config::default()).unwrap();
    for (section, table) in defaults.as_table().unwrap() {
        assert!(doc.contains(&format!("[{section}]")), "section {section} undocumented");
        for key in table.as_table().unwrap().keys() {
            assert!(doc.contains(&format!("`{key}`")), "{section}.{key} undocumented");
        }
    }
}
