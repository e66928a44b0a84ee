//! Run-directory stages shared by the CLI and the experiment runner.
//!
//! Every stage reads the artifacts of earlier stages from a [`RunDir`] and
//! writes only its own outputs.

mod config;
mod experiment;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use config::{
    EvalConfig, GenerationConfig, LexiconConfig, PipelineConfig, ReviewConfig, SplitConfig,
    SynthConfig,
};
pub use experiment::{run_experiment, run_experiment_on, Cell, CheckResult, ExperimentReport, SignTest};
pub use report::{render_report, rerender_report, write_report_files};

use crate::adjudication::{
    read_annotations, sample_for_review, write_review_items, AdjudicationError, ReviewItem,
};
use crate::assembly::{
    assemble, write_dataset, write_manifest, AssembledDataset, AssemblyError, AugmentationMode,
    Condition, Provenance,
};
use crate::corpus::{
    assign_splits, read_corpus, read_examples, write_examples, Attribute, AttributeLexicon,
    CorpusError, CueLexicon, Example, Split, SplitAssignment,
};
use crate::fairness_eval::{bootstrap_ci, evaluate, EvalError, GroupMetrics};
use crate::generation::{
    generate_batch, read_generations, Backend, BackendKind, Candidate, EchoBackend,
    GenerationError, GenerationParams, Generator, ParaphraseBackend, PromptTemplate,
    RemoteBackend, ReplayBackend, RuleSwapBackend, SwapTable, SystemClock, VariationTable,
};
use crate::model::{ModelError, TextClassifier, TrainConfig};
use crate::qc::{self, read_qc_log, write_qc_log, QcContext, QcError};
use crate::synthcorpus::{generate_corpus, SynthError, TemplateSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing {path}; run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Json { path: PathBuf, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Qc(#[from] QcError),
    #[error(transparent)]
    Adjudication(#[from] AdjudicationError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Errors caused by bad input rather than a failing stage.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::MissingArtifact { .. }
                | PipelineError::Qc(QcError::InvalidConfig(_))
                | PipelineError::Generation(GenerationError::InvalidParams(_))
                | PipelineError::Generation(GenerationError::InvalidTemplate(_))
                | PipelineError::Generation(GenerationError::Config(_))
                | PipelineError::Synth(_)
        )
    }
}

/// Layout of one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_file(&self) -> PathBuf {
        self.root.join("corpus/corpus.jsonl")
    }
    pub fn split_file(&self) -> PathBuf {
        self.root.join("corpus/split.json")
    }
    pub fn diagnostics_file(&self) -> PathBuf {
        self.root.join("reports/diagnostics.json")
    }
    pub fn archive_file(&self, c: Condition) -> PathBuf {
        self.root.join(format!("archive/{c}.jsonl"))
    }
    pub fn candidates_file(&self, c: Condition) -> PathBuf {
        self.root.join(format!("archive/{c}.candidates.jsonl"))
    }
    pub fn qc_log_file(&self, c: Condition) -> PathBuf {
        self.root.join(format!("qc_log/{c}.jsonl"))
    }
    pub fn accepted_file(&self, c: Condition) -> PathBuf {
        self.root.join(format!("qc_log/{c}.accepted.jsonl"))
    }
    pub fn dataset_file(&self, c: Condition) -> PathBuf {
        self.root.join(format!("datasets/{c}.jsonl"))
    }
    pub fn manifest_file(&self, c: Condition) -> PathBuf {
        self.root.join(format!("manifests/{c}.jsonl"))
    }
    pub fn model_file(&self, c: Condition) -> PathBuf {
        self.root.join(format!("models/{c}.model"))
    }
    pub fn eval_file(&self, c: Condition) -> PathBuf {
        self.root.join(format!("reports/eval-{c}.json"))
    }
    pub fn review_queue_file(&self) -> PathBuf {
        self.root.join("review/queue.jsonl")
    }
    pub fn annotations_file(&self) -> PathBuf {
        self.root.join("review/annotations.jsonl")
    }
    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned()
    }

    /// `path`, or an error naming the stage that produces it.
    pub fn require(&self, path: PathBuf, stage: &'static str) -> Result<PathBuf, PipelineError> {
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::MissingArtifact { path, stage })
        }
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    ensure_parent(path)?;
    let mut s = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    ensure_parent(path)?;
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| PipelineError::Json {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Json {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Lexicons and tables resolved from configuration.
#[derive(Debug, Clone)]
pub struct Lexicons {
    pub attribute: AttributeLexicon,
    pub cues: CueLexicon,
    pub swap: SwapTable,
    pub variations: VariationTable,
}

impl Lexicons {
    pub fn load(cfg: &LexiconConfig) -> Result<Self, PipelineError> {
        let attribute = match &cfg.attribute_dir {
            Some(d) => AttributeLexicon::load_dir(d)?,
            None => AttributeLexicon::default_gender(),
        };
        let cues = match &cfg.cues {
            Some(p) => CueLexicon::load(p)?,
            None => CueLexicon::default_cash(),
        };
        let swap = match &cfg.swap_table {
            Some(p) => SwapTable::load(p)?,
            None => SwapTable::default_gender(),
        };
        let variations = match &cfg.variations {
            Some(p) => VariationTable::load(p, &cues, &attribute)?,
            None => VariationTable::default_table(),
        };
        Ok(Lexicons {
            attribute,
            cues,
            swap,
            variations,
        })
    }
}

pub fn load_template(spec: &str) -> Result<PromptTemplate, PipelineError> {
    match PromptTemplate::builtin(spec) {
        Some(t) => Ok(t),
        None => Ok(PromptTemplate::load(Path::new(spec))?),
    }
}

/// Build the backend for `kind`. `replay_from` is required for replay.
pub fn build_backend(
    kind: BackendKind,
    template: &PromptTemplate,
    lexicons: &Lexicons,
    cfg: &GenerationConfig,
    replay_from: Option<&Path>,
) -> Result<Box<dyn Backend>, PipelineError> {
    Ok(match kind {
        BackendKind::RuleSwap => Box::new(RuleSwapBackend::new(template.clone(), lexicons.swap.clone())),
        BackendKind::Paraphrase => Box::new(
            ParaphraseBackend::new(template.clone(), lexicons.swap.clone(), lexicons.variations.clone())
                .with_rate(cfg.variation_rate),
        ),
        BackendKind::Echo => Box::new(EchoBackend::new(template.clone())),
        BackendKind::Remote => Box::new(RemoteBackend::from_env(Duration::from_millis(cfg.remote_timeout_ms))?),
        BackendKind::Replay => {
            let path = replay_from.ok_or_else(|| {
                PipelineError::Config("the replay backend needs an archive to replay".into())
            })?;
            Box::new(ReplayBackend::from_archive(path)?)
        }
    })
}

pub fn load_corpus(run: &RunDir) -> Result<Vec<Example>, PipelineError> {
    Ok(read_examples(&run.require(run.corpus_file(), "synth` or `ingest")?)?)
}

pub fn load_split(run: &RunDir) -> Result<SplitAssignment, PipelineError> {
    read_json(&run.require(run.split_file(), "synth` or `ingest")?)
}

/// Write `corpus` into the run and fix its split with `seed`.
pub fn stage_prepare(run: &RunDir, corpus: &[Example], split_cfg: &SplitConfig, seed: u64) -> Result<(), PipelineError> {
    ensure_parent(&run.corpus_file())?;
    write_examples(&run.corpus_file(), corpus)?;
    let split = assign_splits(corpus, split_cfg.train_fraction, seed, split_cfg.stratified)?;
    if split.fallback_warning {
        log::warn!("a label has fewer than two examples; split is not stratified");
    }
    write_json(&run.split_file(), &split)
}

/// The synthetic corpus described by `cfg.synth`.
pub fn synthesize(cfg: &PipelineConfig) -> Result<Vec<Example>, PipelineError> {
    let lexicons = Lexicons::load(&cfg.lexicons)?;
    let templates = match &cfg.synth.templates_dir {
        Some(d) => TemplateSet::load_dir(d, &lexicons.cues)?,
        None => TemplateSet::default_set(),
    };
    let corpus = generate_corpus(
        &templates,
        cfg.synth.n,
        cfg.synth.male_fraction,
        cfg.synth.positive_fraction,
        cfg.synth.seed,
    )?;
    Ok(corpus)
}

/// Generate the synthetic corpus and fix its split with `split_seed`.
pub fn stage_synth(run: &RunDir, cfg: &PipelineConfig, split_seed: u64) -> Result<Vec<Example>, PipelineError> {
    let corpus = synthesize(cfg)?;
    stage_prepare(run, &corpus, &cfg.split, split_seed)?;
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Winogender,
}

/// Canonicalize an external corpus and fix its split.
pub fn stage_ingest(
    run: &RunDir,
    cfg: &PipelineConfig,
    input: &Path,
    format: InputFormat,
    seed: u64,
) -> Result<Vec<Example>, PipelineError> {
    let lexicons = Lexicons::load(&cfg.lexicons)?;
    let corpus = match format {
        InputFormat::Jsonl => read_corpus(input, &lexicons.attribute, &lexicons.cues)?,
        InputFormat::Winogender => {
            crate::corpus::ingest_winogender(input, &lexicons.attribute, &lexicons.cues)?
        }
    };
    if corpus.is_empty() {
        return Err(CorpusError::Empty.into());
    }
    stage_prepare(run, &corpus, &cfg.split, seed)?;
    Ok(corpus)
}

/// The least frequent known attribute among training originals; ties go to
/// the lexicographically first.
pub fn minority_attribute(train: &[&Example]) -> Option<Attribute> {
    let mut counts: BTreeMap<&Attribute, usize> = BTreeMap::new();
    for e in train.iter().filter(|e| !e.attribute.is_unknown()) {
        *counts.entry(&e.attribute).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .min_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)))
        .map(|(a, _)| a.clone())
}

/// Originals eligible as generation sources under `mode`, paired with the
/// minority target.
fn generation_jobs<'a>(
    corpus: &'a [Example],
    split: &SplitAssignment,
    mode: AugmentationMode,
) -> Vec<(&'a Example, Attribute)> {
    let (train, _) = split.partition(corpus);
    let Some(target) = minority_attribute(&train) else {
        return Vec::new();
    };
    let pool: Vec<&Example> = match mode {
        AugmentationMode::TrainOnly => train,
        AugmentationMode::PreSplit => corpus.iter().collect(),
    };
    pool.into_iter()
        .filter(|e| !e.attribute.is_unknown() && e.attribute != target)
        .map(|e| (e, target.clone()))
        .collect()
}

fn condition_backend(condition: Condition, cfg: &GenerationConfig) -> Result<(BackendKind, GenerationParams), PipelineError> {
    match condition {
        Condition::Baseline => Err(PipelineError::Config("the baseline condition has no generation step".into())),
        Condition::Swap => {
            let seed = cfg.params.seeds.first().copied().unwrap_or(1);
            Ok((BackendKind::RuleSwap, GenerationParams::with_seeds(vec![seed])))
        }
        Condition::Lgsa => Ok((cfg.lgsa_backend, cfg.params.clone())),
    }
}

/// Generate candidates for a condition; rewrites that condition's archive.
pub fn stage_generate(
    run: &RunDir,
    cfg: &PipelineConfig,
    condition: Condition,
    backend_override: Option<BackendKind>,
    replay_from: Option<&Path>,
) -> Result<Vec<Candidate>, PipelineError> {
    let corpus = load_corpus(run)?;
    let split = load_split(run)?;
    let lexicons = Lexicons::load(&cfg.lexicons)?;
    let template = load_template(&cfg.generation.template)?;
    let (default_kind, params) = condition_backend(condition, &cfg.generation)?;
    let kind = backend_override.unwrap_or(default_kind);
    params.validate()?;
    // built before the archive is truncated so a run can replay itself
    let backend = build_backend(kind, &template, &lexicons, &cfg.generation, replay_from)?;

    let archive_path = run.archive_file(condition);
    ensure_parent(&archive_path)?;
    if archive_path.exists() {
        fs::remove_file(&archive_path)?;
    }
    let mut archive = crate::generation::ArchiveWriter::open(&archive_path)?;
    let origin = match condition {
        Condition::Swap => crate::corpus::Origin::Swap,
        _ => crate::corpus::Origin::Lgsa,
    };
    let generator = Generator {
        template: &template,
        backend: backend.as_ref(),
        params: &params,
        retry: cfg.generation.retry,
        clock: &SystemClock,
        origin,
    };
    let jobs = generation_jobs(&corpus, &split, cfg.augmentation_mode);
    let candidates = generate_batch(&jobs, &generator, &mut archive, cfg.generation.concurrency)?;
    write_jsonl(&run.candidates_file(condition), &candidates)?;
    Ok(candidates)
}

/// Attribute and label verifiers trained on the training originals.
pub struct Verifiers {
    pub attribute: Option<TextClassifier>,
    pub label: Option<TextClassifier>,
}

pub fn train_verifiers(train: &[&Example], config: TrainConfig) -> Verifiers {
    let texts: Vec<&str> = train.iter().map(|e| e.text.as_str()).collect();
    let labels: Vec<u8> = train.iter().map(|e| e.label).collect();
    let label = TextClassifier::fit(&texts, &labels, ["0".into(), "1".into()], config).ok();

    let known: Vec<&&Example> = train.iter().filter(|e| !e.attribute.is_unknown()).collect();
    let mut classes: Vec<Attribute> = known.iter().map(|e| e.attribute.clone()).collect();
    classes.sort();
    classes.dedup();
    let attribute = if classes.len() == 2 {
        let texts: Vec<&str> = known.iter().map(|e| e.text.as_str()).collect();
        let ys: Vec<u8> = known.iter().map(|e| u8::from(e.attribute == classes[1])).collect();
        TextClassifier::fit(
            &texts,
            &ys,
            [classes[0].to_string(), classes[1].to_string()],
            config,
        )
        .ok()
    } else {
        None
    };
    Verifiers { attribute, label }
}

/// Gate a condition's candidates; writes the QC log and the retained set.
pub fn stage_qc(run: &RunDir, cfg: &PipelineConfig, condition: Condition) -> Result<qc::QcOutcome, PipelineError> {
    let corpus = load_corpus(run)?;
    let split = load_split(run)?;
    let candidates: Vec<Candidate> =
        read_jsonl(&run.require(run.candidates_file(condition), "generate")?)?;
    let lexicons = Lexicons::load(&cfg.lexicons)?;
    let (train, _) = split.partition(&corpus);
    let verifiers = train_verifiers(&train, cfg.train);
    let ctx = QcContext::new(cfg.qc.clone(), &lexicons.attribute, &lexicons.cues)?.with_verifiers(
        verifiers.attribute.as_ref().map(|v| v as &dyn qc::Verifier),
        verifiers.label.as_ref().map(|v| v as &dyn qc::Verifier),
    );
    let originals: BTreeMap<String, &Example> = corpus.iter().map(|e| (e.id.clone(), e)).collect();
    let outcome = qc::run_batch(&candidates, &originals, &ctx)?;
    ensure_parent(&run.qc_log_file(condition))?;
    write_qc_log(&run.qc_log_file(condition), &outcome.log)?;
    write_jsonl(&run.accepted_file(condition), &outcome.retained)?;
    Ok(outcome)
}

/// Review queue sampled from a condition's retained candidates.
pub fn stage_sample(run: &RunDir, cfg: &PipelineConfig, condition: Condition, seed: u64) -> Result<Vec<ReviewItem>, PipelineError> {
    let corpus = load_corpus(run)?;
    let by_id: BTreeMap<&str, &Example> = corpus.iter().map(|e| (e.id.as_str(), e)).collect();
    let accepted: Vec<Candidate> = read_jsonl(&run.require(run.accepted_file(condition), "qc")?)?;
    let items: Vec<ReviewItem> = accepted
        .iter()
        .map(|c| ReviewItem {
            candidate_id: c.id.clone(),
            original_text: by_id.get(c.source_id.as_str()).map(|e| e.text.clone()).unwrap_or_default(),
            candidate_text: c.text.clone(),
            target_attribute: c.target_attribute.to_string(),
            partition_id: format!("{condition}/{}/{}", c.generation.template_id, c.generation.backend_id),
        })
        .collect();
    let sample = sample_for_review(&items, cfg.review.rate, seed)?;
    ensure_parent(&run.review_queue_file())?;
    write_review_items(&run.review_queue_file(), &sample)?;
    Ok(sample)
}

/// Merge originals and retained candidates; writes dataset and manifest.
pub fn stage_assemble(run: &RunDir, cfg: &PipelineConfig, condition: Condition) -> Result<AssembledDataset, PipelineError> {
    let corpus = load_corpus(run)?;
    let split = load_split(run)?;
    let reviews = if run.annotations_file().exists() {
        read_annotations(&run.annotations_file())?
    } else {
        Vec::new()
    };
    let dataset = if condition == Condition::Baseline {
        let provenance = Provenance {
            qc_log: &[],
            qc_log_ref: String::new(),
            generations: &[],
            archive_ref: String::new(),
            reviews: &reviews,
        };
        assemble(&corpus, &split, &[], &provenance, condition, cfg.augmentation_mode)?
    } else {
        let accepted: Vec<Candidate> = read_jsonl(&run.require(run.accepted_file(condition), "qc")?)?;
        let log = read_qc_log(&run.require(run.qc_log_file(condition), "qc")?)?;
        let generations = read_generations(&run.require(run.archive_file(condition), "generate")?)?;
        let provenance = Provenance {
            qc_log: &log,
            qc_log_ref: run.relative(&run.qc_log_file(condition)),
            generations: &generations,
            archive_ref: run.relative(&run.archive_file(condition)),
            reviews: &reviews,
        };
        assemble(&corpus, &split, &accepted, &provenance, condition, cfg.augmentation_mode)?
    };
    ensure_parent(&run.dataset_file(condition))?;
    write_dataset(&run.dataset_file(condition), &dataset)?;
    ensure_parent(&run.manifest_file(condition))?;
    write_manifest(&run.manifest_file(condition), &dataset.manifest)?;
    Ok(dataset)
}

fn load_dataset(run: &RunDir, condition: Condition) -> Result<Vec<crate::assembly::DatasetRow>, PipelineError> {
    Ok(crate::assembly::read_dataset(&run.require(run.dataset_file(condition), "assemble")?)?)
}

/// Train the task classifier on a condition's train split.
pub fn stage_train(run: &RunDir, cfg: &PipelineConfig, condition: Condition) -> Result<TextClassifier, PipelineError> {
    let rows = load_dataset(run, condition)?;
    let train: Vec<&Example> = rows.iter().filter(|r| r.split == Split::Train).map(|r| &r.example).collect();
    let texts: Vec<&str> = train.iter().map(|e| e.text.as_str()).collect();
    let labels: Vec<u8> = train.iter().map(|e| e.label).collect();
    let model = TextClassifier::fit(&texts, &labels, ["0".into(), "1".into()], cfg.train)?;
    ensure_parent(&run.model_file(condition))?;
    model.save(&run.model_file(condition))?;
    Ok(model)
}

/// Evaluation output for one condition.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EvalOutput {
    pub condition: Condition,
    pub metrics: GroupMetrics,
    pub overall_ci: (f64, f64),
    pub n_train: usize,
    pub n_synthetic: usize,
    pub test_hash: String,
}

/// Score a condition's model on its test split.
pub fn stage_eval(run: &RunDir, cfg: &PipelineConfig, condition: Condition, seed: u64) -> Result<EvalOutput, PipelineError> {
    let rows = load_dataset(run, condition)?;
    let model = TextClassifier::load(&run.require(run.model_file(condition), "train")?)?;
    let test: Vec<&Example> = rows.iter().filter(|r| r.split == Split::Test).map(|r| &r.example).collect();
    let (metrics, correct) = evaluate(&model, &test)?;
    let overall_ci = bootstrap_ci(&correct, cfg.eval.bootstrap_resamples, cfg.eval.level, seed)?;
    let out = EvalOutput {
        condition,
        metrics,
        overall_ci,
        n_train: rows.iter().filter(|r| r.split == Split::Train).count(),
        n_synthetic: rows
            .iter()
            .filter(|r| r.example.origin != crate::corpus::Origin::Original)
            .count(),
        test_hash: crate::assembly::test_rows_hash(&rows),
    };
    write_json(&run.eval_file(condition), &out)?;
    Ok(out)
}

/// Per-attribute counts and label balance of the run's corpus.
pub fn stage_diagnose(run: &RunDir) -> Result<crate::corpus::Diagnostics, PipelineError> {
    let corpus = load_corpus(run)?;
    let diagnostics = crate::corpus::compute_diagnostics(&corpus)?;
    write_json(&run.diagnostics_file(), &diagnostics)?;
    Ok(diagnostics)
}

/// Agreement and calibration over the run's annotation log.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct AdjudicationReport {
    /// Absent with fewer than two raters sharing an item.
    pub agreement: Option<crate::adjudication::AgreementStats>,
    pub calibration: crate::adjudication::CalibrationDecision,
}

pub fn stage_adjudication_report(run: &RunDir, cfg: &PipelineConfig) -> Result<AdjudicationReport, PipelineError> {
    let queue = crate::adjudication::read_review_items(&run.require(run.review_queue_file(), "adjudicate sample")?)?;
    let records = read_annotations(&run.require(run.annotations_file(), "adjudicate serve")?)?;
    let agreement = match crate::adjudication::compute_agreement(&records) {
        Ok(a) => Some(a),
        Err(AdjudicationError::NotEnoughRaters) => None,
        Err(e) => return Err(e.into()),
    };
    let partitions = queue
        .into_iter()
        .map(|i| (i.candidate_id, i.partition_id))
        .collect();
    let calibration = crate::adjudication::calibrate(&records, cfg.review.tolerance, &partitions)?;
    let report = AdjudicationReport {
        agreement,
        calibration,
    };
    write_json(&run.reports_dir().join("adjudication.json"), &report)?;
    Ok(report)
}
