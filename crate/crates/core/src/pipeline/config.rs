use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::assembly::{AugmentationMode, Condition};
use crate::generation::{BackendKind, GenerationParams, RetryPolicy};
use crate::model::TrainConfig;
use crate::qc::QcConfig;

/// Every tunable of a run. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seeds: Vec<u64>,
    pub conditions: Vec<Condition>,
    pub augmentation_mode: AugmentationMode,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub lexicons: LexiconConfig,
    pub generation: GenerationConfig,
    pub qc: QcConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub review: ReviewConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seeds: (1..=5).collect(),
            conditions: Condition::ALL.to_vec(),
            augmentation_mode: AugmentationMode::TrainOnly,
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            lexicons: LexiconConfig::default(),
            generation: GenerationConfig::default(),
            qc: QcConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            review: ReviewConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.conditions.is_empty() {
            return bad("at least one condition is required".into());
        }
        for (name, v) in [
            ("synth.male_fraction", self.synth.male_fraction),
            ("synth.positive_fraction", self.synth.positive_fraction),
            ("generation.variation_rate", self.generation.variation_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad(format!(
                "split.train_fraction = {} must lie strictly between 0 and 1",
                self.split.train_fraction
            ));
        }
        if !(self.review.rate > 0.0 && self.review.rate <= 1.0) {
            return bad(format!("review.rate = {} is outside (0, 1]", self.review.rate));
        }
        if !(0.0..1.0).contains(&self.review.tolerance) {
            return bad(format!("review.tolerance = {} is outside [0, 1)", self.review.tolerance));
        }
        if self.train.epochs == 0 || self.train.learning_rate <= 0.0 || self.train.learning_rate.is_nan() || self.train.l2 < 0.0 {
            return bad("train needs epochs > 0, learning_rate > 0 and l2 >= 0".into());
        }
        if self.generation.concurrency == 0 {
            return bad("generation.concurrency must be at least 1".into());
        }
        self.generation.params.validate()?;
        self.qc.validate()?;
        let template_path = crate::generation::PromptTemplate::builtin(&self.generation.template)
            .is_none()
            .then(|| PathBuf::from(&self.generation.template));
        let referenced = [
            ("synth.templates_dir", self.synth.templates_dir.as_ref()),
            ("lexicons.attribute_dir", self.lexicons.attribute_dir.as_ref()),
            ("lexicons.cues", self.lexicons.cues.as_ref()),
            ("lexicons.swap_table", self.lexicons.swap_table.as_ref()),
            ("lexicons.variations", self.lexicons.variations.as_ref()),
            ("qc.toxicity_lexicon", self.qc.toxicity_lexicon.as_ref()),
            ("qc.stereotype_lexicon", self.qc.stereotype_lexicon.as_ref()),
            ("qc.synonym_lexicon", self.qc.synonym_lexicon.as_ref()),
            ("qc.ambiguous_lexicon", self.qc.ambiguous_lexicon.as_ref()),
            ("generation.template", template_path.as_ref()),
        ];
        for (name, path) in referenced {
            if let Some(p) = path.filter(|p| !p.exists()) {
                return bad(format!("{name}: {} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub male_fraction: f64,
    pub positive_fraction: f64,
    /// Seeds the corpus itself; experiment seeds only vary the split.
    pub seed: u64,
    /// Shipped templates when absent.
    pub templates_dir: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 1000,
            male_fraction: 0.8,
            positive_fraction: 0.5,
            seed: 0,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.7,
            stratified: true,
        }
    }
}

/// Optional overrides of the shipped lexicons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconConfig {
    /// Directory of `<attribute>.txt` token lists.
    pub attribute_dir: Option<PathBuf>,
    pub cues: Option<PathBuf>,
    pub swap_table: Option<PathBuf>,
    pub variations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Built-in template id or a path to a template file.
    pub template: String,
    /// Backend of the `lgsa` condition. `swap` always uses rule-swap.
    pub lgsa_backend: BackendKind,
    pub params: GenerationParams,
    pub retry: RetryPolicy,
    pub concurrency: usize,
    /// Fraction of matched variation sites rewritten by the paraphrase backend.
    pub variation_rate: f64,
    pub remote_timeout_ms: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            template: "label_preserving".into(),
            lgsa_backend: BackendKind::Paraphrase,
            params: GenerationParams::default(),
            retry: RetryPolicy::default(),
            concurrency: 4,
            variation_rate: 0.5,
            remote_timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bootstrap_resamples: usize,
    pub level: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bootstrap_resamples: 1000,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    pub rate: f64,
    pub tolerance: f64,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        ReviewConfig {
            rate: 0.05,
            tolerance: crate::adjudication::DEFAULT_TOLERANCE,
        }
    }
}
