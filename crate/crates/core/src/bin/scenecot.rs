//! Command-line entry point. Every payload on stdout is JSON; progress and
//! diagnostics go to stderr.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use scenecot::config::{resolve, Config, ConfigError};
use scenecot::grpo::checkpoint::{Checkpoint, CheckpointKind};
use scenecot::grpo::{train_sft, train_toy, ToyPolicy, TrainError};
use scenecot::pipeline::{
    run_pipeline, validate_dataset_text, HttpPipelineClients, MockPipelineClients, PipelineClients, PipelineError,
};
use scenecot::reward::clients::{FixedScoringClients, HashedScoringClients, ScoringClients};
use scenecot::reward::http::HttpScoringClients;
use scenecot::reward::RewardEngine;
use scenecot::vision::{validate_state_with, CoTRecord, ValidationReport};

const EXIT_OK: u8 = 0;
const EXIT_INVALID: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_EXTERNAL: u8 = 3;

const AFTER_HELP: &str = "\
Exit codes:
  0  success
  1  validation failure, scoring contract failure, pipeline failures, bad dataset
  2  usage error: bad flags, unreadable input, bad configuration
  3  external-service error after retries

Configuration precedence: flag > SCENECOT_<SECTION>_<KEY> environment variable > config file > default.
Any config key can be set with --set section.key=value.";

#[derive(Parser)]
#[command(name = "scenecot", version, about = "Structured-vision CoT data, rewards and toy training", after_help = AFTER_HELP)]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set grpo.kl_coef=0.1 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a structured-vision document, a record, or a JSONL dataset.
    Validate(ValidateArgs),
    /// Score one rollout with the gated reward.
    Score(ScoreArgs),
    /// Build a dataset with the construction pipeline.
    Pipeline(PipelineArgs),
    /// Train the toy policy.
    #[command(subcommand)]
    Train(TrainCommand),
}

#[derive(Args)]
struct ValidateArgs {
    /// File to check, or - for stdin.
    path: String,
    /// Treat the input as a JSONL dataset (implied by a .jsonl extension).
    #[arg(long)]
    jsonl: bool,
}

#[derive(Args)]
struct ScoreArgs {
    /// File holding the raw model output.
    #[arg(long, value_name = "PATH")]
    rollout: PathBuf,
    /// The user prompt the rollout answers.
    #[arg(long)]
    prompt: String,
    /// Use the built-in mock scorers (config: scoring.mock).
    #[arg(long, conflicts_with = "endpoints")]
    mock: bool,
    /// Config file with an [endpoints] section for the real services.
    #[arg(long, value_name = "PATH")]
    endpoints: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Output JSONL path (config: pipeline.output).
    #[arg(long, value_name = "PATH")]
    output: Option<String>,
    /// Skip records already in the output (config: pipeline.resume).
    #[arg(long)]
    resume: bool,
    /// Use the built-in mock services (config: pipeline.mock).
    #[arg(long)]
    mock: bool,
    /// Records per domain (config: pipeline.per_domain).
    #[arg(long, value_name = "N")]
    per_domain: Option<usize>,
    /// Concurrent record builders (config: pipeline.max_parallel).
    #[arg(long, value_name = "N")]
    max_parallel: Option<usize>,
}

#[derive(Subcommand)]
enum TrainCommand {
    /// GRPO on the built-in format-reward task.
    Toy(TrainArgs),
    /// Supervised fine-tuning on a JSONL dataset.
    Sft(TrainArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// RNG seed (config: train.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// GRPO steps (config: train.steps).
    #[arg(long)]
    steps: Option<usize>,
    /// SFT epochs (config: train.epochs).
    #[arg(long)]
    epochs: Option<usize>,
    /// SFT dataset (config: train.data).
    #[arg(long, value_name = "PATH")]
    data: Option<String>,
    /// Output directory for curve.jsonl and checkpoint.json (config: train.out_dir).
    #[arg(long, value_name = "DIR")]
    out_dir: Option<String>,
    /// Learning rate (config: grpo.lr for toy, sft.lr for sft).
    #[arg(long)]
    lr: Option<f64>,
}

/// A failure with its exit code and a JSON body for stdout.
struct Failure {
    code: u8,
    body: serde_json::Value,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        let message = message.into();
        Self { code, body: json!({ "error": message }) }
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("outputs serialize"));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            if let Some(message) = failure.body.get("error").and_then(|m| m.as_str()) {
                eprintln!("scenecot: {message}");
            }
            print_json(&failure.body);
            ExitCode::from(failure.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let mut flags = Vec::new();
    for item in &cli.overrides {
        let (key, value) =
            item.split_once('=').ok_or_else(|| Failure::new(EXIT_USAGE, format!("--set expects KEY=VALUE, got {item:?}")))?;
        flags.push((key.trim().to_string(), value.to_string()));
    }
    let mut config_path = cli.config.clone();
    match cli.command {
        Command::Validate(args) => {
            let config = load_config(config_path.as_deref(), &flags)?;
            cmd_validate(&args, &config)
        }
        Command::Score(args) => {
            if args.endpoints.is_some() {
                if config_path.is_some() {
                    return Err(Failure::new(EXIT_USAGE, "use either --config or --endpoints, not both"));
                }
                config_path = args.endpoints.clone();
            }
            if args.mock {
                flags.push(("scoring.mock".into(), "true".into()));
            }
            let config = load_config(config_path.as_deref(), &flags)?;
            cmd_score(&args, &config)
        }
        Command::Pipeline(args) => {
            push_opt(&mut flags, "pipeline.output", args.output.as_ref().map(|o| toml_string(o)));
            push_opt(&mut flags, "pipeline.per_domain", args.per_domain);
            push_opt(&mut flags, "pipeline.max_parallel", args.max_parallel);
            if args.resume {
                flags.push(("pipeline.resume".into(), "true".into()));
            }
            if args.mock {
                flags.push(("pipeline.mock".into(), "true".into()));
            }
            let config = load_config(config_path.as_deref(), &flags)?;
            cmd_pipeline(&config)
        }
        Command::Train(which) => {
            let (args, lr_key) = match &which {
                TrainCommand::Toy(a) => (a, "grpo.lr"),
                TrainCommand::Sft(a) => (a, "sft.lr"),
            };
            push_opt(&mut flags, "train.seed", args.seed);
            push_opt(&mut flags, "train.steps", args.steps);
            push_opt(&mut flags, "train.epochs", args.epochs);
            push_opt(&mut flags, "train.data", args.data.as_ref().map(|d| toml_string(d)));
            push_opt(&mut flags, "train.out_dir", args.out_dir.as_ref().map(|d| toml_string(d)));
            push_opt(&mut flags, lr_key, args.lr.map(|lr| format!("{lr:e}")));
            let config = load_config(config_path.as_deref(), &flags)?;
            match which {
                TrainCommand::Toy(_) => cmd_train_toy(&config),
                TrainCommand::Sft(_) => cmd_train_sft(&config),
            }
        }
    }
}

fn push_opt<T: ToString>(flags: &mut Vec<(String, String)>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        flags.push((key.to_string(), v.to_string()));
    }
}

/// Quotes a path so it is never read as some other TOML literal.
fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn load_config(path: Option<&Path>, flags: &[(String, String)]) -> Result<Config, Failure> {
    let text = match path {
        Some(p) => Some(
            fs::read_to_string(p)
                .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot read config {}: {e}", p.display())))?,
        ),
        None => None,
    };
    resolve(text.as_deref(), Config::process_env(), flags).map_err(|e: ConfigError| Failure::new(EXIT_USAGE, e.to_string()))
}

fn read_input(path: &str) -> Result<String, Failure> {
    let mut bytes = Vec::new();
    let outcome = if path == "-" {
        io::stdin().read_to_end(&mut bytes).map(|_| ())
    } else {
        fs::read(path).map(|b| bytes = b)
    };
    outcome.map_err(|e| Failure::new(EXIT_USAGE, format!("cannot read {path}: {e}")))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn cmd_validate(args: &ValidateArgs, config: &Config) -> Result<u8, Failure> {
    let text = read_input(&args.path)?;
    if args.jsonl || args.path.ends_with(".jsonl") {
        let report = validate_dataset_text(Path::new(&args.path), &text);
        print_json(&report);
        return Ok(if report.valid { EXIT_OK } else { EXIT_INVALID });
    }
    let is_record = serde_json::from_str::<serde_json::Value>(&text)
        .map(|v| v.get("record_id").is_some())
        .unwrap_or(false);
    let report = if is_record {
        match CoTRecord::from_json(&text) {
            Ok(_) => ValidationReport::ok(),
            Err(violations) => ValidationReport::from_violations(violations),
        }
    } else {
        validate_state_with(&text, &config.pipeline.schema)
    };
    print_json(&report);
    Ok(if report.valid { EXIT_OK } else { EXIT_INVALID })
}

fn cmd_score(args: &ScoreArgs, config: &Config) -> Result<u8, Failure> {
    let rollout = fs::read_to_string(&args.rollout)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot read {}: {e}", args.rollout.display())))?;
    let clients: Arc<dyn ScoringClients> = if config.scoring.mock {
        if config.mock.hashed {
            Arc::new(HashedScoringClients)
        } else {
            Arc::new(FixedScoringClients::new(config.mock.judge, config.mock.hps, config.mock.vlm))
        }
    } else {
        Arc::new(HttpScoringClients::new(&config.endpoints).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?)
    };
    let engine = RewardEngine::new(clients)
        .with_config(config.reward.clone())
        .with_retry(config.endpoints.retry_policy());
    match engine.score_rollout(&rollout, &args.prompt) {
        Ok(breakdown) => {
            print_json(&breakdown);
            Ok(EXIT_OK)
        }
        Err(e) => {
            let code = if e.is_external() { EXIT_EXTERNAL } else { EXIT_INVALID };
            let body = json!({ "error": e.to_string(), "partial": e.partial() });
            Err(Failure { code, body })
        }
    }
}

fn cmd_pipeline(config: &Config) -> Result<u8, Failure> {
    let clients: Box<dyn PipelineClients> = if config.pipeline.mock {
        Box::new(MockPipelineClients::with_faults(config.mock.faults.clone()))
    } else {
        Box::new(HttpPipelineClients::new(&config.endpoints).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?)
    };
    match run_pipeline(&config.pipeline, clients.as_ref(), &config.endpoints.retry_policy()) {
        Ok(report) => {
            for f in &report.failures {
                eprintln!("scenecot: {} [{}] {}", f.domain, f.stage, f.message);
            }
            print_json(&report);
            Ok(if report.failed == 0 { EXIT_OK } else { EXIT_INVALID })
        }
        Err(e @ (PipelineError::Config(_) | PipelineError::Unwritable { .. })) => Err(Failure::new(EXIT_USAGE, e.to_string())),
        Err(e @ PipelineError::Write { .. }) => Err(Failure::new(EXIT_INVALID, e.to_string())),
    }
}

fn prepare_out_dir(config: &Config) -> Result<PathBuf, Failure> {
    let dir = config.train.out_dir.clone();
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::new(EXIT_USAGE, format!("cannot write {}: {e}", path.display())))
}

fn cmd_train_toy(config: &Config) -> Result<u8, Failure> {
    let dir = prepare_out_dir(config)?;
    let (seed, steps) = (config.train.seed, config.train.steps);
    if steps == 0 {
        return Err(Failure::new(EXIT_USAGE, "train.steps must be positive"));
    }
    eprintln!("scenecot: toy GRPO, {steps} steps, seed {seed}, lr {}", config.grpo.lr);
    let (curve, policy) = train_toy(&config.grpo, steps, seed).map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
    let curve_path = dir.join("curve.jsonl");
    let checkpoint_path = dir.join("checkpoint.json");
    write_file(&curve_path, &curve.to_jsonl())?;
    Checkpoint::from_policy(CheckpointKind::Grpo, &policy, seed, &config.grpo)
        .save(&checkpoint_path)
        .map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    print_json(&json!({
        "command": "train toy",
        "seed": seed,
        "steps": steps,
        "initial_mean_reward": curve.points.first().map(|p| p.mean_reward),
        "last_step_mean_reward": curve.final_mean_reward(),
        "final_mean_reward": curve.tail_mean_reward(50),
        "first_step_reaching_0_9": curve.first_step_reaching(0.9),
        "final_lr": curve.points.last().map(|p| p.lr),
        "curve": curve_path,
        "checkpoint": checkpoint_path,
    }));
    Ok(EXIT_OK)
}

fn cmd_train_sft(config: &Config) -> Result<u8, Failure> {
    let data = config
        .train
        .data
        .clone()
        .ok_or_else(|| Failure::new(EXIT_USAGE, "train sft needs --data (config: train.data)"))?;
    let text = fs::read_to_string(&data)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot read {}: {e}", data.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let record = CoTRecord::from_json(line).map_err(|violations| Failure {
            code: EXIT_INVALID,
            body: json!({ "error": format!("{}: line {} is not a valid record", data.display(), i + 1), "violations": violations }),
        })?;
        records.push(record);
    }
    let dir = prepare_out_dir(config)?;
    let (seed, epochs) = (config.train.seed, config.train.epochs);
    let mut policy = ToyPolicy::uniform(config.sft.position_buckets);
    eprintln!("scenecot: SFT on {} records, {epochs} epochs, seed {seed}, lr {}", records.len(), config.sft.lr);
    let curve = train_sft(&mut policy, &records, &config.sft, epochs, seed).map_err(|e| {
        let code = match e {
            TrainError::Config(_) => EXIT_USAGE,
            _ => EXIT_INVALID,
        };
        Failure::new(code, e.to_string())
    })?;
    let curve_path = dir.join("curve.jsonl");
    let checkpoint_path = dir.join("checkpoint.json");
    write_file(&curve_path, &curve.to_jsonl())?;
    Checkpoint::from_policy(CheckpointKind::Sft, &policy, seed, &config.sft)
        .save(&checkpoint_path)
        .map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    print_json(&json!({
        "command": "train sft",
        "seed": seed,
        "records": records.len(),
        "epochs": curve.epochs,
        "strictly_decreasing": curve.strictly_decreasing(),
        "final_loss": curve.epochs.last().map(|e| e.mean_loss),
        "curve": curve_path,
        "checkpoint": checkpoint_path,
    }));
    Ok(EXIT_OK)
}
