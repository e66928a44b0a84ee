//! `lgsa`: runs each pipeline stage against a run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lgsa_core::assembly::{AugmentationMode, Condition};
use lgsa_core::generation::BackendKind;
use lgsa_core::pipeline::{
    self, InputFormat, PipelineConfig, PipelineError, RunDir,
};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Service(#[from] lgsa_review_service::ServiceError),
    #[error("{0}")]
    CheckFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Pipeline(e) if e.is_validation() => 1,
            CliError::Service(lgsa_review_service::ServiceError::Config(_)) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lgsa", version, about = "Counterfactual augmentation pipeline")]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory (default `run`, or `run_dir` from the config file).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Canonicalize an external corpus and fix its split.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_format, default_value = "jsonl")]
        format: InputFormat,
        /// Split seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Generate the synthetic corpus and fix its split.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        /// Split seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Per-attribute counts and label balance.
    Diagnose,
    /// Generate candidates for one condition.
    Generate {
        #[arg(long, value_parser = parse_condition)]
        condition: Condition,
        /// Backend override; `remote` is the only one that uses the network.
        #[arg(long, value_parser = parse_backend)]
        backend: Option<BackendKind>,
        /// Archive to replay from with `--backend replay`.
        #[arg(long)]
        replay_archive: Option<PathBuf>,
        #[command(flatten)]
        generation: GenerationArgs,
    },
    /// Gate a condition's candidates.
    Qc {
        #[arg(long, value_parser = parse_condition)]
        condition: Condition,
    },
    /// Human review: sample a queue, serve it, or summarize the ratings.
    Adjudicate {
        #[command(subcommand)]
        action: AdjudicateAction,
    },
    /// Merge originals with retained candidates.
    Assemble {
        #[arg(long, value_parser = parse_condition)]
        condition: Condition,
        #[arg(long, value_parser = parse_mode)]
        augmentation_mode: Option<AugmentationMode>,
    },
    /// Train the task classifier for a condition.
    Train {
        #[arg(long, value_parser = parse_condition)]
        condition: Condition,
    },
    /// Evaluate a trained condition on its test split.
    Eval {
        #[arg(long, value_parser = parse_condition)]
        condition: Condition,
        /// Bootstrap seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run every condition over several split seeds and write the report.
    Experiment {
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',', value_parser = parse_condition)]
        conditions: Option<Vec<Condition>>,
        /// Backend of the lgsa condition.
        #[arg(long, value_parser = parse_backend)]
        backend: Option<BackendKind>,
        #[arg(long, value_parser = parse_mode)]
        augmentation_mode: Option<AugmentationMode>,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        generation: GenerationArgs,
        /// Exit 2 when a reproduction check fails.
        #[arg(long)]
        check: bool,
    },
    /// Re-render the experiment report from the run directory.
    Report {
        /// Exit 2 when a reproduction check fails.
        #[arg(long)]
        check: bool,
    },
}

#[derive(Debug, Subcommand)]
enum AdjudicateAction {
    /// Sample retained candidates into the review queue.
    Sample {
        #[arg(long, value_parser = parse_condition, default_value = "lgsa")]
        condition: Condition,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Serve the queue over HTTP (REVIEW_ADDR, REVIEW_TOKEN).
    Serve,
    /// Agreement and calibration from the annotation log, optionally after
    /// importing an exported file.
    Export {
        /// Line-delimited annotation records to append to the run's log.
        #[arg(long)]
        import: Option<PathBuf>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    male_fraction: Option<f64>,
    #[arg(long)]
    positive_fraction: Option<f64>,
    /// Seed of the synthetic corpus itself.
    #[arg(long)]
    corpus_seed: Option<u64>,
    /// Directory with templates.txt, professions.txt and clause files.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerationArgs {
    /// Built-in prompt template id or a template file.
    #[arg(long)]
    template: Option<String>,
    /// One generation seed per variant.
    #[arg(long = "gen-seeds", value_delimiter = ',')]
    gen_seeds: Option<Vec<u64>>,
    #[arg(long)]
    concurrency: Option<usize>,
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse()
}
fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse()
}
fn parse_mode(s: &str) -> Result<AugmentationMode, String> {
    s.parse()
}
fn parse_format(s: &str) -> Result<InputFormat, String> {
    match s {
        "jsonl" => Ok(InputFormat::Jsonl),
        "winogender" => Ok(InputFormat::Winogender),
        other => Err(format!("unknown format `{other}` (jsonl, winogender)")),
    }
}

/// Config file plus the run directory it may name.
fn load_config(path: Option<&Path>) -> Result<(PipelineConfig, Option<PathBuf>), CliError> {
    let Some(path) = path else {
        return Ok((PipelineConfig::default(), None));
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let run_dir = match table.remove("run_dir") {
        Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
        Some(other) => {
            return Err(CliError::Validation(format!(
                "{}: run_dir must be a string, got {other}",
                path.display()
            )))
        }
        None => None,
    };
    let cfg: PipelineConfig = table
        .try_into()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok((cfg, run_dir))
}

impl SynthArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(n) = self.n {
            cfg.synth.n = n;
        }
        if let Some(f) = self.male_fraction {
            cfg.synth.male_fraction = f;
        }
        if let Some(f) = self.positive_fraction {
            cfg.synth.positive_fraction = f;
        }
        if let Some(s) = self.corpus_seed {
            cfg.synth.seed = s;
        }
        if let Some(d) = &self.templates {
            cfg.synth.templates_dir = Some(d.clone());
        }
    }
}

impl GenerationArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(t) = &self.template {
            cfg.generation.template = t.clone();
        }
        if let Some(seeds) = &self.gen_seeds {
            cfg.generation.params.seeds = seeds.clone();
            cfg.generation.params.variants_per_example = seeds.len();
        }
        if let Some(c) = self.concurrency {
            cfg.generation.concurrency = c;
        }
    }
}

impl SplitArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(f) = self.train_fraction {
            cfg.split.train_fraction = f;
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    println!(
        "{}",
        serde_json::to_string_pretty(value).map_err(std::io::Error::other)?
    );
    Ok(())
}

fn check_outcome(report: &pipeline::ExperimentReport, check: bool) -> Result<(), CliError> {
    if check && !report.passed() {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        return Err(CliError::CheckFailed(format!("checks failed: {}", failed.join(", "))));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (mut cfg, config_run_dir) = load_config(cli.config.as_deref())?;
    let run = RunDir::new(
        cli.run_dir
            .or(config_run_dir)
            .unwrap_or_else(|| PathBuf::from("run")),
    );
    match cli.command {
        Command::Ingest {
            input,
            format,
            seed,
            split,
        } => {
            split.apply(&mut cfg);
            cfg.validate()?;
            if !input.exists() {
                return Err(CliError::Validation(format!("{} does not exist", input.display())));
            }
            let corpus = pipeline::stage_ingest(&run, &cfg, &input, format, seed)?;
            println!("ingested {} examples into {}", corpus.len(), run.corpus_file().display());
        }
        Command::Synth { synth, seed, split } => {
            synth.apply(&mut cfg);
            split.apply(&mut cfg);
            cfg.validate()?;
            let corpus = pipeline::stage_synth(&run, &cfg, seed)?;
            println!("wrote {} examples to {}", corpus.len(), run.corpus_file().display());
        }
        Command::Diagnose => print_json(&pipeline::stage_diagnose(&run)?)?,
        Command::Generate {
            condition,
            backend,
            replay_archive,
            generation,
        } => {
            generation.apply(&mut cfg);
            cfg.validate()?;
            let candidates =
                pipeline::stage_generate(&run, &cfg, condition, backend, replay_archive.as_deref())?;
            println!(
                "{} candidates archived in {}",
                candidates.len(),
                run.archive_file(condition).display()
            );
        }
        Command::Qc { condition } => {
            cfg.validate()?;
            let outcome = pipeline::stage_qc(&run, &cfg, condition)?;
            println!(
                "{} candidates retained; log in {}",
                outcome.retained.len(),
                run.qc_log_file(condition).display()
            );
        }
        Command::Adjudicate { action } => adjudicate(&run, &mut cfg, action)?,
        Command::Assemble {
            condition,
            augmentation_mode,
        } => {
            if let Some(m) = augmentation_mode {
                cfg.augmentation_mode = m;
            }
            cfg.validate()?;
            let dataset = pipeline::stage_assemble(&run, &cfg, condition)?;
            println!(
                "{} rows ({} synthetic) in {}",
                dataset.rows.len(),
                dataset.manifest.entries.len(),
                run.dataset_file(condition).display()
            );
        }
        Command::Train { condition } => {
            cfg.validate()?;
            pipeline::stage_train(&run, &cfg, condition)?;
            println!("model saved to {}", run.model_file(condition).display());
        }
        Command::Eval { condition, seed } => {
            cfg.validate()?;
            print_json(&pipeline::stage_eval(&run, &cfg, condition, seed)?)?;
        }
        Command::Experiment {
            seeds,
            conditions,
            backend,
            augmentation_mode,
            synth,
            generation,
            check,
        } => {
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(c) = conditions {
                cfg.conditions = c;
            }
            if let Some(b) = backend {
                cfg.generation.lgsa_backend = b;
            }
            if let Some(m) = augmentation_mode {
                cfg.augmentation_mode = m;
            }
            synth.apply(&mut cfg);
            generation.apply(&mut cfg);
            let report = pipeline::run_experiment(run.root(), &cfg)?;
            print!("{}", pipeline::render_report(&report));
            check_outcome(&report, check)?;
        }
        Command::Report { check } => {
            let report = pipeline::rerender_report(&run.reports_dir())?;
            print!("{}", pipeline::render_report(&report));
            check_outcome(&report, check)?;
        }
    }
    Ok(())
}

fn adjudicate(run: &RunDir, cfg: &mut PipelineConfig, action: AdjudicateAction) -> Result<(), CliError> {
    match action {
        AdjudicateAction::Sample {
            condition,
            rate,
            seed,
        } => {
            if let Some(r) = rate {
                cfg.review.rate = r;
            }
            cfg.validate()?;
            let queue = pipeline::stage_sample(run, cfg, condition, seed)?;
            println!("{} items queued in {}", queue.len(), run.review_queue_file().display());
        }
        AdjudicateAction::Serve => {
            cfg.validate()?;
            let queue = run.require(run.review_queue_file(), "adjudicate sample")?;
            let token = lgsa_review_service::token_from_env()?;
            let addr = lgsa_review_service::addr_from_env()?;
            let state = lgsa_review_service::AppState::open(&queue, &run.annotations_file(), token)?
                .with_default_tolerance(cfg.review.tolerance);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(lgsa_review_service::serve(addr, state))?;
        }
        AdjudicateAction::Export { import, tolerance } => {
            if let Some(t) = tolerance {
                cfg.review.tolerance = t;
            }
            cfg.validate()?;
            if let Some(path) = import {
                let records = lgsa_core::adjudication::read_annotations(&path)
                    .map_err(|e| CliError::Validation(e.to_string()))?;
                let mut existing = if run.annotations_file().exists() {
                    lgsa_core::adjudication::read_annotations(&run.annotations_file())
                        .map_err(PipelineError::from)?
                } else {
                    Vec::new()
                };
                existing.extend(records);
                if let Some(parent) = run.annotations_file().parent() {
                    fs::create_dir_all(parent)?;
                }
                lgsa_core::adjudication::write_annotations(&run.annotations_file(), &existing)
                    .map_err(PipelineError::from)?;
            }
            print_json(&pipeline::stage_adjudication_report(run, cfg)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
