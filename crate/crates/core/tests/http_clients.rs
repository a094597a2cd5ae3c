//! The HTTP service adapters against a local stand-in server.

mod common;

use std::sync::atomic::Ordering;
use std::sync::Arc;

use scenecot::config::Endpoints;
use scenecot::pipeline::{run_pipeline, HttpPipelineClients, PipelineConfig, PipelineStage};
use scenecot::retry::{ClientError, RetryPolicy};
use scenecot::reward::http::HttpScoringClients;
use scenecot::reward::RewardEngine;

use common::server::TestServer;
use common::rollout_for_flags;

fn endpoints(url: &str) -> Endpoints {
    Endpoints {
        judge: Some(url.to_string()),
        generator: Some(format!("{url}/")),
        image_scorer: Some(url.to_string()),
        prompt_creator: Some(url.to_string()),
        extractor: Some(url.to_string()),
        abstractor: Some(url.to_string()),
        timeout_ms: 5_000,
        retries: 2,
        backoff_ms: 1,
    }
}

fn engine(endpoints: &Endpoints) -> RewardEngine {
    RewardEngine::new(Arc::new(HttpScoringClients::new(endpoints).unwrap())).with_retry(endpoints.retry_policy())
}

#[test]
fn scores_a_rollout_over_http() {
    let server = TestServer::start();
    let rollout = rollout_for_flags(true, true, true).unwrap();
    let b = engine(&endpoints(&server.url)).score_rollout(&rollout, "a cat").unwrap();
    let expected = 0.3 * (5.0 / 6.0) + 0.7 * (0.6 * 0.5 + 0.4 * 0.25);
    assert!((b.r_final - expected).abs() <= 1e-12);
    assert_eq!(b.external_calls_made, 3);
    let mut paths = server.paths();
    paths.sort();
    assert_eq!(paths, ["/generate", "/judge", "/score"]);
    let requests = server.state.requests.lock().unwrap();
    let judge = &requests.iter().find(|(p, _)| p == "/judge").unwrap().1;
    assert_eq!(judge["user_prompt"], "a cat");
    assert_eq!(judge["final_prompt"], "a red cat");
    let score = &requests.iter().find(|(p, _)| p == "/score").unwrap().1;
    assert_eq!(score["image_ref"], "img:a red cat");
}

#[test]
fn gated_rollouts_make_no_requests() {
    let server = TestServer::start();
    let rollout = rollout_for_flags(false, false, true).unwrap();
    let b = engine(&endpoints(&server.url)).score_rollout(&rollout, "a cat").unwrap();
    assert_eq!((b.r_final, b.external_calls_made), (0.0, 0));
    assert!(server.paths().is_empty());
}

#[test]
fn transient_failures_are_retried() {
    let server = TestServer::start();
    server.state.judge_failures.store(2, Ordering::SeqCst);
    let rollout = rollout_for_flags(true, true, true).unwrap();
    let b = engine(&endpoints(&server.url)).score_rollout(&rollout, "a cat").unwrap();
    assert_eq!(b.external_calls_made, 5);
    assert_eq!(server.paths().iter().filter(|p| *p == "/judge").count(), 3);
}

#[test]
fn exhausted_retries_surface_with_partial_results() {
    let server = TestServer::start();
    server.state.judge_failures.store(10, Ordering::SeqCst);
    let mut ep = endpoints(&server.url);
    ep.retries = 1;
    let rollout = rollout_for_flags(true, true, true).unwrap();
    let err = engine(&ep).score_rollout(&rollout, "a cat").unwrap_err();
    assert!(err.is_external());
    let partial = err.partial();
    assert_eq!(partial.format.r_format, 1.0);
    assert_eq!(partial.external_calls_made, 2);
    assert!(err.to_string().contains("503"), "{err}");
}

#[test]
fn undecodable_replies_and_missing_endpoints_are_errors() {
    let server = TestServer::start();
    server.state.garbage_scores.store(true, Ordering::SeqCst);
    let mut ep = endpoints(&server.url);
    ep.retries = 0;
    let rollout = rollout_for_flags(true, true, true).unwrap();
    let err = engine(&ep).score_rollout(&rollout, "a cat").unwrap_err();
    assert!(err.to_string().contains("decode"), "{err}");

    let clients = HttpScoringClients::new(&Endpoints::default()).unwrap();
    use scenecot::reward::clients::ScoringClients;
    assert_eq!(clients.generate("x"), Err(ClientError::NotConfigured("generator")));
}

#[test]
fn pipeline_runs_against_http_services() {
    let server = TestServer::start();
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig { per_domain: 2, output: dir.path().join("d.jsonl"), ..PipelineConfig::default() };
    let clients = HttpPipelineClients::new(&endpoints(&server.url)).unwrap();
    let report = run_pipeline(&config, &clients, &RetryPolicy::immediate(0)).unwrap();
    assert_eq!((report.succeeded, report.failed), (16, 0));
    let dataset = scenecot::pipeline::validate_dataset(&config.output).unwrap();
    assert!(dataset.valid, "{dataset:?}");
    assert_eq!(dataset.records, 16);
}

#[test]
fn unreachable_pipeline_services_fail_at_the_prompt_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig { per_domain: 1, output: dir.path().join("d.jsonl"), ..PipelineConfig::default() };
    let clients = HttpPipelineClients::new(&endpoints("http://127.0.0.1:9")).unwrap();
    let report = run_pipeline(&config, &clients, &RetryPolicy::immediate(0)).unwrap();
    assert_eq!(report.failed, 8);
    assert_eq!(report.failures_by_stage.get(&PipelineStage::Prompts), Some(&8));
}
