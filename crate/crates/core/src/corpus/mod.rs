//! Canonical example records, attribute/label inference, diagnostics and
//! train/test splitting.

mod io;
mod lexicon;
mod split;

pub use io::{ingest_winogender, read_corpus, read_examples, write_examples, CorpusRecord};
pub use lexicon::{AttributeLexicon, CueLexicon};
pub use split::{assign_splits, Split, SplitAssignment};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    Empty,
    #[error("corpus too small to split: {0} examples (need at least 2)")]
    TooSmall(usize),
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("invalid example `{id}`: {reason}")]
    InvalidExample { id: String, reason: String },
    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A value on the protected-attribute axis, e.g. `male` or `female`.
/// `unknown` marks examples whose attribute could not be determined.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Attribute(String);

impl Attribute {
    pub const UNKNOWN: &'static str = "unknown";

    pub fn new(value: impl Into<String>) -> Self {
        Attribute(value.into().trim().to_lowercase())
    }

    pub fn unknown() -> Self {
        Attribute(Self::UNKNOWN.to_string())
    }

    pub fn is_unknown(&self) -> bool {
        self.0 == Self::UNKNOWN
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Attribute {
    fn from(s: &str) -> Self {
        Attribute::new(s)
    }
}

/// Where an example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Swap,
    Lgsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeSource {
    Metadata,
    Inferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeProvenance {
    pub source: AttributeSource,
    pub confidence: f64,
    pub evidence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Metadata,
    Cue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProvenance {
    pub source: LabelSource,
    pub evidence: String,
}

/// One canonical record: a sentence, its attribute value and binary label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub attribute: Attribute,
    pub label: u8,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_provenance: Option<AttributeProvenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_provenance: Option<LabelProvenance>,
}

impl Example {
    /// Check the record invariants.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: &str| CorpusError::InvalidExample {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(bad("empty id"));
        }
        if text::squash_whitespace(&self.text).is_empty() {
            return Err(bad("empty text"));
        }
        if self.label > 1 {
            return Err(bad("label must be 0 or 1"));
        }
        if self.origin == Origin::Original
            && (self.attribute_provenance.is_none() || self.label_provenance.is_none())
        {
            return Err(bad("original example without provenance"));
        }
        let tokens = text::tokenize(&self.text);
        if let Some(p) = &self.attribute_provenance {
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(bad("attribute confidence outside [0, 1]"));
            }
            if p.source == AttributeSource::Inferred
                && !p.evidence.is_empty()
                && !tokens.contains(&p.evidence)
            {
                return Err(bad("attribute evidence does not occur in text"));
            }
        }
        if let Some(p) = &self.label_provenance {
            if p.source == LabelSource::Cue
                && !p.evidence.is_empty()
                && !tokens.contains(&p.evidence)
            {
                return Err(bad("label evidence does not occur in text"));
            }
        }
        Ok(())
    }
}

/// Result of attribute inference.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeGuess {
    pub attribute: Attribute,
    pub confidence: f64,
    pub evidence: String,
}

impl AttributeGuess {
    fn abstain() -> Self {
        AttributeGuess {
            attribute: Attribute::unknown(),
            confidence: 0.0,
            evidence: String::new(),
        }
    }
}

/// Vote over lexicon tokens found in `text`. Confidence is the winner's share
/// of all matched tokens; ties and no-matches abstain to `unknown`.
pub fn infer_attribute(text: &str, lexicon: &AttributeLexicon) -> AttributeGuess {
    let mut votes: BTreeMap<&Attribute, (usize, String)> = BTreeMap::new();
    let mut total = 0usize;
    for token in text::tokenize(text) {
        if let Some(attr) = lexicon.lookup(&token) {
            total += 1;
            let entry = votes.entry(attr).or_insert((0, String::new()));
            if entry.0 == 0 {
                entry.1 = token;
            }
            entry.0 += 1;
        }
    }
    if total == 0 {
        return AttributeGuess::abstain();
    }
    let best = votes.values().map(|(n, _)| *n).max().unwrap_or(0);
    let mut winners = votes.iter().filter(|(_, (n, _))| *n == best);
    let (attr, (count, evidence)) = winners.next().expect("at least one vote");
    if winners.next().is_some() {
        return AttributeGuess::abstain();
    }
    AttributeGuess {
        attribute: (*attr).clone(),
        confidence: *count as f64 / total as f64,
        evidence: evidence.clone(),
    }
}

/// 1 iff any cue token occurs in the normalized token sequence.
pub fn extract_label(text: &str, cues: &CueLexicon) -> u8 {
    u8::from(first_cue(text, cues).is_some())
}

/// The first cue token in `text`, if any.
pub fn first_cue(text: &str, cues: &CueLexicon) -> Option<String> {
    text::tokenize(text).into_iter().find(|t| cues.contains(t))
}

/// Per-attribute counts and label distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub total: usize,
    pub counts: BTreeMap<Attribute, usize>,
    pub label_distribution: BTreeMap<Attribute, BTreeMap<u8, f64>>,
}

pub fn compute_diagnostics(corpus: &[Example]) -> Result<Diagnostics, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut counts: BTreeMap<Attribute, usize> = BTreeMap::new();
    let mut label_counts: BTreeMap<Attribute, BTreeMap<u8, usize>> = BTreeMap::new();
    for ex in corpus {
        *counts.entry(ex.attribute.clone()).or_default() += 1;
        *label_counts
            .entry(ex.attribute.clone())
            .or_default()
            .entry(ex.label)
            .or_default() += 1;
    }
    let label_distribution = label_counts
        .into_iter()
        .map(|(attr, by_label)| {
            let n = counts[&attr] as f64;
            let dist = by_label
                .into_iter()
                .map(|(label, c)| (label, c as f64 / n))
                .collect();
            (attr, dist)
        })
        .collect();
    Ok(Diagnostics {
        total: corpus.len(),
        counts,
        label_distribution,
    })
}
