//! Attribute-conditioned candidate generation with verbatim archival.

mod archive;
mod backend;
mod paraphrase;
mod prompt;
mod swap;

use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archive::{
    archive_roundtrip, read_archive, read_generations, ArchiveRecord, ArchiveWriter,
    FailedAttempt, RawGeneration,
};
pub use backend::{
    Backend, BackendError, BackendKind, EchoBackend, ParaphraseBackend, RemoteBackend,
    ReplayBackend, RuleSwapBackend, REMOTE_TOKEN_ENV, REMOTE_URL_ENV,
};
pub use paraphrase::VariationTable;
pub use prompt::{render_prompt, PromptTemplate, SENTENCE_PLACEHOLDER, TARGET_PLACEHOLDER};
pub use swap::{rule_swap, Position, SwapTable};

use crate::corpus::{Attribute, Example, Origin};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("cannot render a prompt for an empty sentence")]
    EmptySentence,
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("example `{0}` already has target attribute `{1}`")]
    SameAttribute(String, Attribute),
    #[error("backend `{backend}` failed for `{source_id}` (seed {seed}) after {attempts} attempt(s): {error}")]
    Backend {
        backend: String,
        source_id: String,
        seed: u64,
        attempts: u32,
        error: BackendError,
    },
    #[error("swap table: {0}")]
    SwapTable(String),
    #[error("variation table: {0}")]
    InvalidVariation(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("archive I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub variants_per_example: usize,
    pub max_output_tokens: u32,
    /// One sampling seed per variant.
    pub seeds: Vec<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.7,
            variants_per_example: 2,
            max_output_tokens: 96,
            seeds: vec![1, 2],
        }
    }
}

impl GenerationParams {
    pub fn with_seeds(seeds: Vec<u64>) -> Self {
        GenerationParams {
            variants_per_example: seeds.len(),
            seeds,
            ..GenerationParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        let bad = |m: String| Err(GenerationError::InvalidParams(m));
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.variants_per_example == 0 {
            return bad("variants_per_example must be positive".into());
        }
        if self.variants_per_example != self.seeds.len() {
            return bad(format!(
                "{} variants but {} seeds",
                self.variants_per_example,
                self.seeds.len()
            ));
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive".into());
        }
        Ok(())
    }
}

/// Where a candidate came from inside the archive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRef {
    pub backend_id: String,
    pub template_id: String,
    pub seed: u64,
    pub variant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub source_id: String,
    pub text: String,
    pub target_attribute: Attribute,
    pub origin: Origin,
    pub generation: GenerationRef,
}

pub fn candidate_id(source_id: &str, origin: Origin, target: &Attribute, variant: usize) -> String {
    let tag = match origin {
        Origin::Original => "original",
        Origin::Swap => "swap",
        Origin::Lgsa => "lgsa",
    };
    format!("{source_id}.{tag}.{target}.v{variant}")
}

/// Bounded exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 250,
            max_delay_ms: 4000,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    /// Delay after the `failures`-th failed attempt (1-based).
    pub fn delay(&self, failures: u32) -> Duration {
        let factor = 1u64.checked_shl(failures.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

/// Everything a generation run needs besides the examples.
pub struct Generator<'a> {
    pub template: &'a PromptTemplate,
    pub backend: &'a dyn Backend,
    pub params: &'a GenerationParams,
    pub retry: RetryPolicy,
    pub clock: &'a dyn Clock,
    pub origin: Origin,
}

/// Outcome of one example: archive records in call order, then either the
/// candidates or the error that stopped it.
struct Attempted {
    records: Vec<ArchiveRecord>,
    result: Result<Vec<(Candidate, RawGeneration)>, GenerationError>,
}

impl Generator<'_> {
    fn run_one(&self, example: &Example, target: &Attribute) -> Attempted {
        let mut records = Vec::new();
        let result = self.run_one_inner(example, target, &mut records);
        Attempted { records, result }
    }

    fn run_one_inner(
        &self,
        example: &Example,
        target: &Attribute,
        records: &mut Vec<ArchiveRecord>,
    ) -> Result<Vec<(Candidate, RawGeneration)>, GenerationError> {
        self.params.validate()?;
        if &example.attribute == target {
            return Err(GenerationError::SameAttribute(example.id.clone(), target.clone()));
        }
        let prompt = render_prompt(self.template, target, &example.text)?;
        let mut out = Vec::with_capacity(self.params.seeds.len());
        for (variant, &seed) in self.params.seeds.iter().enumerate() {
            let mut attempt = 0;
            let response = loop {
                attempt += 1;
                match self.backend.complete(&prompt, seed, self.params) {
                    Ok(text) => break text,
                    Err(error) => {
                        records.push(ArchiveRecord::Failure(FailedAttempt {
                            source_id: example.id.clone(),
                            target_attribute: target.to_string(),
                            template_id: self.template.id.clone(),
                            rendered_prompt: prompt.clone(),
                            backend_id: self.backend.id().to_string(),
                            seed,
                            attempt,
                            error: error.to_string(),
                            timestamp_ms: self.clock.now_ms(),
                        }));
                        if !error.is_retryable() || attempt >= self.retry.max_attempts {
                            return Err(GenerationError::Backend {
                                backend: self.backend.id().to_string(),
                                source_id: example.id.clone(),
                                seed,
                                attempts: attempt,
                                error,
                            });
                        }
                        std::thread::sleep(self.retry.delay(attempt));
                    }
                }
            };
            let raw = RawGeneration {
                source_id: example.id.clone(),
                target_attribute: target.to_string(),
                template_id: self.template.id.clone(),
                rendered_prompt: prompt.clone(),
                response_text: response.clone(),
                params: self.params.clone(),
                backend_id: self.backend.id().to_string(),
                seed,
                variant,
                timestamp_ms: self.clock.now_ms(),
            };
            records.push(ArchiveRecord::Generation(raw.clone()));
            let candidate = Candidate {
                id: candidate_id(&example.id, self.origin, target, variant),
                source_id: example.id.clone(),
                text: response,
                target_attribute: target.clone(),
                origin: self.origin,
                generation: GenerationRef {
                    backend_id: self.backend.id().to_string(),
                    template_id: self.template.id.clone(),
                    seed,
                    variant,
                },
            };
            out.push((candidate, raw));
        }
        Ok(out)
    }
}

/// Generate `variants_per_example` candidates for one example. Every
/// response, and every failed attempt, is archived before returning.
pub fn generate_candidates(
    example: &Example,
    target: &Attribute,
    generator: &Generator<'_>,
    archive: &mut ArchiveWriter,
) -> Result<Vec<(Candidate, RawGeneration)>, GenerationError> {
    let attempted = generator.run_one(example, target);
    for r in &attempted.records {
        archive.append(r)?;
    }
    attempted.result
}

/// Generate for many `(example, target)` jobs with at most `concurrency`
/// examples in flight. Archive order is by source id, then seed, regardless
/// of scheduling. The first failing job (in that order) is reported after
/// all records are archived.
pub fn generate_batch(
    jobs: &[(&Example, Attribute)],
    generator: &Generator<'_>,
    archive: &mut ArchiveWriter,
    concurrency: usize,
) -> Result<Vec<Candidate>, GenerationError> {
    let mut ordered: Vec<&(&Example, Attribute)> = jobs.iter().collect();
    ordered.sort_by(|a, b| a.0.id.cmp(&b.0.id).then_with(|| a.1.cmp(&b.1)));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| GenerationError::Config(e.to_string()))?;
    let attempted: Vec<Attempted> = pool.install(|| {
        ordered
            .par_iter()
            .map(|(ex, target)| generator.run_one(ex, target))
            .collect()
    });

    let mut candidates = Vec::new();
    let mut first_error = None;
    for a in attempted {
        for r in &a.records {
            archive.append(r)?;
        }
        match a.result {
            Ok(pairs) => candidates.extend(pairs.into_iter().map(|(c, _)| c)),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(candidates),
    }
}
