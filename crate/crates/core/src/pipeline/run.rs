use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::clients::PipelineClients;
use crate::retry::{ClientError, RetryPolicy};
use crate::vision::{compose_cot, parse_state, CoTRecord, Domain, SchemaOptions, ValidationReport, VisionError};

/// The construction stage a failure belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineStage {
    Prompts,
    Generate,
    Extract,
    Abstract,
    Compose,
}

impl PipelineStage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Prompts => "prompts",
            Self::Generate => "generate",
            Self::Extract => "extract",
            Self::Abstract => "abstract",
            Self::Compose => "compose",
        }
    }
}

impl std::fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("generative prompt is empty")]
    EmptyPrompt,
    #[error("stage {stage} failed after {attempts} attempt(s): {source}")]
    Client { stage: PipelineStage, attempts: u32, source: ClientError },
    #[error("bad extraction: {} violation(s), first at {}", .report.violations.len(),
        .report.violations.first().map(|v| v.path.as_str()).unwrap_or("$"))]
    BadExtraction { report: ValidationReport },
    #[error("could not assemble the record: {0}")]
    Compose(VisionError),
}

impl BuildError {
    pub fn stage(&self) -> PipelineStage {
        match self {
            Self::EmptyPrompt => PipelineStage::Prompts,
            Self::Client { stage, .. } => *stage,
            Self::BadExtraction { .. } => PipelineStage::Extract,
            Self::Compose(_) => PipelineStage::Compose,
        }
    }
}

fn call<T>(
    retry: &RetryPolicy,
    stage: PipelineStage,
    f: impl FnMut() -> Result<T, ClientError>,
) -> Result<T, BuildError> {
    match retry.run(f) {
        (Ok(v), _) => Ok(v),
        (Err(source), attempts) => Err(BuildError::Client { stage, attempts, source }),
    }
}

/// Runs generate → extract → abstract for one prompt and assembles the
/// record. Extractions that fail validation are returned as errors with the
/// full report.
pub fn build_record(
    generative_prompt: &str,
    domain: Domain,
    clients: &dyn PipelineClients,
    retry: &RetryPolicy,
    schema: &SchemaOptions,
) -> Result<CoTRecord, BuildError> {
    if generative_prompt.trim().is_empty() {
        return Err(BuildError::EmptyPrompt);
    }
    let image_ref = call(retry, PipelineStage::Generate, || clients.generate(generative_prompt))?;
    let raw = call(retry, PipelineStage::Extract, || clients.extract(&image_ref))?;
    let state = match parse_state(&raw, schema) {
        (report, Some(state)) if report.valid => state,
        (report, _) => return Err(BuildError::BadExtraction { report }),
    };
    let abstraction =
        call(retry, PipelineStage::Abstract, || clients.abstract_prompt(generative_prompt, &image_ref))?;
    compose_cot(&abstraction.user_prompt, &abstraction.thinking_text, state, generative_prompt, domain)
        .map_err(BuildError::Compose)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Target count for every domain not listed in `targets`.
    pub per_domain: usize,
    /// Per-domain overrides of `per_domain`.
    pub targets: BTreeMap<Domain, usize>,
    pub max_parallel: usize,
    pub output: PathBuf,
    /// Skip prompts and records already present in `output`.
    pub resume: bool,
    /// Use the built-in deterministic mock services.
    pub mock: bool,
    pub schema: SchemaOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            per_domain: 10,
            targets: BTreeMap::new(),
            max_parallel: 4,
            output: PathBuf::from("dataset.jsonl"),
            resume: false,
            mock: false,
            schema: SchemaOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn target(&self, domain: Domain) -> usize {
        self.targets.get(&domain).copied().unwrap_or(self.per_domain)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_parallel == 0 {
            return Err("max_parallel must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("output {path} is not writable: {source}")]
    Unwritable { path: PathBuf, source: io::Error },
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCounts {
    pub target: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub domain: Domain,
    /// Absent when the prompt creator itself failed.
    pub generative_prompt: Option<String>,
    pub stage: PipelineStage,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub output: PathBuf,
    pub succeeded: usize,
    pub failed: usize,
    pub skipped: usize,
    pub per_domain: BTreeMap<Domain, DomainCounts>,
    pub failures_by_stage: BTreeMap<PipelineStage, usize>,
    pub failures: Vec<Failure>,
    /// Complete lines of the existing output that could not be read back
    /// during resume. They are left in place.
    pub unreadable_existing_lines: usize,
    /// Bytes of an unterminated trailing line dropped during resume.
    pub truncated_partial_bytes: usize,
}

impl PipelineReport {
    fn fail(&mut self, domain: Domain, generative_prompt: Option<String>, stage: PipelineStage, message: String) {
        self.failed += 1;
        self.per_domain.entry(domain).or_default().failed += 1;
        *self.failures_by_stage.entry(stage).or_default() += 1;
        self.failures.push(Failure { domain, generative_prompt, stage, message });
    }
}

#[derive(Default)]
struct Existing {
    ids: HashSet<String>,
    prompts: HashSet<(Domain, String)>,
    unreadable: usize,
    truncated: usize,
}

/// Reads what a previous run left behind. An unterminated final line is
/// the remnant of an interrupted append and is cut off.
fn load_existing(path: &Path) -> Result<Existing, PipelineError> {
    let unwritable = |source| PipelineError::Unwritable { path: path.to_path_buf(), source };
    let text = match fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Existing::default()),
        Err(e) => return Err(unwritable(e)),
    };
    let complete = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut existing = Existing { truncated: text.len() - complete, ..Existing::default() };
    if existing.truncated > 0 {
        OpenOptions::new().write(true).open(path).and_then(|f| f.set_len(complete as u64)).map_err(unwritable)?;
    }
    for line in String::from_utf8_lossy(&text[..complete]).lines() {
        match CoTRecord::from_json(line) {
            Ok(record) => {
                existing.prompts.insert((record.domain, record.generative_prompt.clone()));
                existing.ids.insert(record.record_id);
            }
            Err(_) => existing.unreadable += 1,
        }
    }
    Ok(existing)
}

struct Job {
    domain: Domain,
    prompt: String,
}

/// Builds records for every domain target and appends them to the output
/// file, one canonical record per line.
///
/// The output is opened before any service is contacted, so an unwritable
/// path fails fast. Builders run on up to `max_parallel` threads; a single
/// writer (the calling thread) commits finished records in job order, so
/// the file content does not depend on the parallelism. Without `resume`
/// records are appended to whatever the file already holds.
pub fn run_pipeline(
    config: &PipelineConfig,
    clients: &dyn PipelineClients,
    retry: &RetryPolicy,
) -> Result<PipelineReport, PipelineError> {
    config.validate().map_err(PipelineError::Config)?;
    let path = config.output.clone();
    let existing = if config.resume { load_existing(&path)? } else { Existing::default() };
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|source| PipelineError::Unwritable { path: path.clone(), source })?;

    let mut report = PipelineReport {
        output: path.clone(),
        unreadable_existing_lines: existing.unreadable,
        truncated_partial_bytes: existing.truncated,
        ..PipelineReport::default()
    };

    let mut jobs = Vec::new();
    for domain in Domain::ALL {
        let target = config.target(domain);
        report.per_domain.insert(domain, DomainCounts { target, ..DomainCounts::default() });
        if target == 0 {
            continue;
        }
        let prompts = match call(retry, PipelineStage::Prompts, || clients.create_prompts(domain, target)) {
            Ok(p) => p,
            Err(e) => {
                for _ in 0..target {
                    report.fail(domain, None, PipelineStage::Prompts, e.to_string());
                }
                continue;
            }
        };
        for k in prompts.len()..target {
            report.fail(domain, None, PipelineStage::Prompts, format!("prompt creator returned {k} of {target} prompts"));
        }
        for prompt in prompts.into_iter().take(target) {
            if existing.prompts.contains(&(domain, prompt.clone())) {
                report.skipped += 1;
                report.per_domain.entry(domain).or_default().skipped += 1;
            } else {
                jobs.push(Job { domain, prompt });
            }
        }
    }

    let workers = if clients.single_flight() { 1 } else { config.max_parallel.min(jobs.len()).max(1) };
    let next = AtomicUsize::new(0);
    let mut seen = existing.ids;
    let mut write_error = None;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next) = (&jobs, &next);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let outcome = build_record(&job.prompt, job.domain, clients, retry, &config.schema);
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut cursor = 0;
        for (i, outcome) in rx {
            pending.insert(i, outcome);
            while let Some(outcome) = pending.remove(&cursor) {
                let job = &jobs[cursor];
                cursor += 1;
                match outcome {
                    Err(e) => report.fail(job.domain, Some(job.prompt.clone()), e.stage(), e.to_string()),
                    Ok(record) if !seen.insert(record.record_id.clone()) => {
                        report.skipped += 1;
                        report.per_domain.entry(job.domain).or_default().skipped += 1;
                    }
                    Ok(record) => {
                        if write_error.is_none() {
                            if let Err(e) = commit_line(&mut file, &record.to_canonical_json()) {
                                write_error = Some(e);
                            }
                        }
                        report.succeeded += 1;
                        report.per_domain.entry(job.domain).or_default().succeeded += 1;
                    }
                }
            }
        }
    });
    match write_error {
        Some(source) => Err(PipelineError::Write { path, source }),
        None => Ok(report),
    }
}

/// Appends one line with a single write so an interrupted run leaves at
/// most an unterminated tail, which resume removes.
fn commit_line(file: &mut File, line: &str) -> io::Result<()> {
    let mut buf = String::with_capacity(line.len() + 1);
    buf.push_str(line);
    buf.push('\n');
    file.write_all(buf.as_bytes())?;
    file.flush()
}
