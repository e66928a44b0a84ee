use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::archive::{read_generations, RawGeneration};
use super::paraphrase::VariationTable;
use super::swap::{rule_swap, SwapTable};
use super::{GenerationError, GenerationParams, PromptTemplate};

pub const REMOTE_URL_ENV: &str = "LGSA_REMOTE_URL";
pub const REMOTE_TOKEN_ENV: &str = "LGSA_REMOTE_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("no archived response for this prompt with seed {0}")]
    ReplayMiss(u64),
    #[error("prompt was not rendered from template `{0}`")]
    UnparsablePrompt(String),
}

impl BackendError {
    /// Only transport failures are worth retrying.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// A text generator. Receives the fully rendered prompt.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(
        &self,
        prompt: &str,
        seed: u64,
        params: &GenerationParams,
    ) -> Result<String, BackendError>;
    /// Token biasing capability. No built-in backend provides it.
    fn supports_logit_bias(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RuleSwap,
    Paraphrase,
    Replay,
    Remote,
    Echo,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::RuleSwap => "rule-swap",
            BackendKind::Paraphrase => "paraphrase",
            BackendKind::Replay => "replay",
            BackendKind::Remote => "remote",
            BackendKind::Echo => "echo",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rule-swap" => Ok(BackendKind::RuleSwap),
            "paraphrase" => Ok(BackendKind::Paraphrase),
            "replay" => Ok(BackendKind::Replay),
            "remote" => Ok(BackendKind::Remote),
            "echo" => Ok(BackendKind::Echo),
            other => Err(format!(
                "unknown backend `{other}` (expected rule-swap, paraphrase, replay, remote or echo)"
            )),
        }
    }
}

fn sentence_of(template: &PromptTemplate, prompt: &str) -> Result<String, BackendError> {
    template
        .parse(prompt)
        .map(|(_, sentence)| sentence)
        .ok_or_else(|| BackendError::UnparsablePrompt(template.id.clone()))
}

/// Deterministic swap of every table token. Ignores the seed.
#[derive(Debug, Clone)]
pub struct RuleSwapBackend {
    template: PromptTemplate,
    table: SwapTable,
}

impl RuleSwapBackend {
    pub fn new(template: PromptTemplate, table: SwapTable) -> Self {
        RuleSwapBackend { template, table }
    }
}

impl Backend for RuleSwapBackend {
    fn id(&self) -> &str {
        "rule-swap"
    }

    fn complete(&self, prompt: &str, _: u64, _: &GenerationParams) -> Result<String, BackendError> {
        Ok(rule_swap(&sentence_of(&self.template, prompt)?, &self.table))
    }
}

/// Rule swap followed by seeded phrase variation. Deterministic per
/// `(prompt, seed)`.
#[derive(Debug, Clone)]
pub struct ParaphraseBackend {
    template: PromptTemplate,
    table: SwapTable,
    variations: VariationTable,
    rate: f64,
}

impl ParaphraseBackend {
    pub const DEFAULT_RATE: f64 = 0.5;

    pub fn new(template: PromptTemplate, table: SwapTable, variations: VariationTable) -> Self {
        ParaphraseBackend {
            template,
            table,
            variations,
            rate: Self::DEFAULT_RATE,
        }
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        self.rate = rate.clamp(0.0, 1.0);
        self
    }
}

fn prompt_seed(prompt: &str, seed: u64) -> u64 {
    let digest = Sha256::digest(prompt.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head) ^ seed
}

impl Backend for ParaphraseBackend {
    fn id(&self) -> &str {
        "paraphrase"
    }

    fn complete(&self, prompt: &str, seed: u64, _: &GenerationParams) -> Result<String, BackendError> {
        let swapped = rule_swap(&sentence_of(&self.template, prompt)?, &self.table);
        let mut rng = ChaCha8Rng::seed_from_u64(prompt_seed(prompt, seed));
        Ok(self.variations.apply(&swapped, self.rate, &mut rng))
    }
}

/// Returns the source sentence unchanged. Useful as a degenerate generator.
#[derive(Debug, Clone)]
pub struct EchoBackend {
    template: PromptTemplate,
}

impl EchoBackend {
    pub fn new(template: PromptTemplate) -> Self {
        EchoBackend { template }
    }
}

impl Backend for EchoBackend {
    fn id(&self) -> &str {
        "echo"
    }

    fn complete(&self, prompt: &str, _: u64, _: &GenerationParams) -> Result<String, BackendError> {
        sentence_of(&self.template, prompt)
    }
}

/// Serves archived responses keyed by `(rendered prompt, seed)`.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<(String, u64), String>,
}

impl ReplayBackend {
    pub fn from_generations<I: IntoIterator<Item = RawGeneration>>(records: I) -> Self {
        let responses = records
            .into_iter()
            .map(|g| ((g.rendered_prompt, g.seed), g.response_text))
            .collect();
        ReplayBackend { responses }
    }

    pub fn from_archive(path: &Path) -> Result<Self, GenerationError> {
        Ok(ReplayBackend::from_generations(read_generations(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, prompt: &str, seed: u64, _: &GenerationParams) -> Result<String, BackendError> {
        self.responses
            .get(&(prompt.to_string(), seed))
            .cloned()
            .ok_or(BackendError::ReplayMiss(seed))
    }
}

#[derive(Debug, Serialize)]
struct RemoteRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct RemoteResponse {
    text: String,
}

/// Generic HTTP adapter: POSTs `{prompt, temperature, max_tokens, seed}` as
/// JSON and expects `{text}` back.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(url: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend {
            url: url.into(),
            token,
            agent,
        }
    }

    /// Endpoint from `LGSA_REMOTE_URL`, bearer token from `LGSA_REMOTE_TOKEN`.
    pub fn from_env(timeout: Duration) -> Result<Self, GenerationError> {
        let url = std::env::var(REMOTE_URL_ENV)
            .map_err(|_| GenerationError::Config(format!("{REMOTE_URL_ENV} is not set")))?;
        let token = std::env::var(REMOTE_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(RemoteBackend::new(url, token, timeout))
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        "remote"
    }

    fn complete(
        &self,
        prompt: &str,
        seed: u64,
        params: &GenerationParams,
    ) -> Result<String, BackendError> {
        let body = RemoteRequest {
            prompt,
            temperature: params.temperature,
            max_tokens: params.max_output_tokens,
            seed,
        };
        let mut req = self.agent.post(&self.url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(BackendError::Rejected(format!("HTTP {status}")));
        }
        let parsed: RemoteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Rejected(format!("malformed response body: {e}")))?;
        Ok(parsed.text)
    }
}
