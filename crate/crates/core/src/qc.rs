//! Automated verification gates. Every candidate gets one report per gate.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{infer_attribute, Attribute, AttributeLexicon, CueLexicon, Example};
use crate::generation::Candidate;
use crate::model::TextClassifier;
use crate::text;

const TOXIC: &str = include_str!("../data/lexicon/toxic.txt");
const STEREOTYPE: &str = include_str!("../data/lexicon/stereotype.txt");
const SYNONYMS: &str = include_str!("../data/lexicon/label_synonyms.txt");
const AMBIGUOUS: &str = include_str!("../data/lexicon/label_ambiguous.txt");

#[derive(Debug, Error)]
pub enum QcError {
    #[error("invalid QC configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} verifier needed but none was trained")]
    MissingVerifier(&'static str),
    #[error("candidate `{0}` has no source example")]
    MissingSource(String),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateId {
    Format,
    Similarity,
    Attribute,
    Label,
    Safety,
    Dedup,
}

impl GateId {
    pub const PER_CANDIDATE: [GateId; 5] = [
        GateId::Format,
        GateId::Similarity,
        GateId::Attribute,
        GateId::Label,
        GateId::Safety,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GateId::Format => "format",
            GateId::Similarity => "similarity",
            GateId::Attribute => "attribute",
            GateId::Label => "label",
            GateId::Safety => "safety",
            GateId::Dedup => "dedup",
        }
    }
}

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub gate_id: GateId,
    pub score: f64,
    pub threshold: f64,
    pub pass: bool,
    pub evidence: String,
}

/// One QC log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcLogRecord {
    pub candidate_id: String,
    pub gate_id: GateId,
    pub score: f64,
    pub threshold: f64,
    pub pass: bool,
    pub evidence: String,
}

impl QcLogRecord {
    pub fn new(candidate_id: &str, r: &GateReport) -> Self {
        QcLogRecord {
            candidate_id: candidate_id.to_string(),
            gate_id: r.gate_id,
            score: r.score,
            threshold: r.threshold,
            pass: r.pass,
            evidence: r.evidence.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    pub attr_conf_thresh: f64,
    pub label_conf_thresh: f64,
    pub length_ratio_bounds: [f64; 2],
    pub similarity_min: f64,
    pub near_dup_min: f64,
    /// Shipped list when absent.
    pub toxicity_lexicon: Option<PathBuf>,
    pub stereotype_lexicon: Option<PathBuf>,
    pub synonym_lexicon: Option<PathBuf>,
    pub ambiguous_lexicon: Option<PathBuf>,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig {
            attr_conf_thresh: 0.75,
            label_conf_thresh: 0.75,
            length_ratio_bounds: [0.5, 1.5],
            similarity_min: 0.5,
            near_dup_min: 0.9,
            toxicity_lexicon: None,
            stereotype_lexicon: None,
            synonym_lexicon: None,
            ambiguous_lexicon: None,
        }
    }
}

impl QcConfig {
    pub fn validate(&self) -> Result<(), QcError> {
        for (name, v) in [
            ("attr_conf_thresh", self.attr_conf_thresh),
            ("label_conf_thresh", self.label_conf_thresh),
            ("similarity_min", self.similarity_min),
            ("near_dup_min", self.near_dup_min),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(QcError::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let [lo, hi] = self.length_ratio_bounds;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(QcError::InvalidConfig(format!(
                "length_ratio_bounds [{lo}, {hi}] not ordered"
            )));
        }
        Ok(())
    }
}

/// Token-phrase list loaded from a lexicon file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhraseList {
    phrases: Vec<Vec<String>>,
}

impl PhraseList {
    pub fn parse(contents: &str) -> Self {
        PhraseList {
            phrases: text::parse_list(contents)
                .iter()
                .map(|l| text::tokenize(l))
                .filter(|p| !p.is_empty())
                .collect(),
        }
    }

    fn load_or(path: Option<&Path>, builtin: &str) -> Result<Self, QcError> {
        match path {
            Some(p) => Ok(PhraseList::parse(&fs::read_to_string(p).map_err(|e| {
                QcError::InvalidConfig(format!("cannot read lexicon {}: {e}", p.display()))
            })?)),
            None => Ok(PhraseList::parse(builtin)),
        }
    }

    /// Earliest match in `tokens`, ties broken by list order.
    pub fn first_match(&self, tokens: &[String]) -> Option<String> {
        self.phrases
            .iter()
            .filter_map(|p| text::find_phrase(tokens, p).map(|pos| (pos, p)))
            .min_by_key(|(pos, _)| *pos)
            .map(|(_, p)| p.join(" "))
    }
}

/// Probability that `text` belongs to `class`.
pub trait Verifier: Send + Sync {
    fn probability(&self, text: &str, class: &str) -> f64;
}

impl Verifier for TextClassifier {
    fn probability(&self, text: &str, class: &str) -> f64 {
        self.class_probability(text, class)
    }
}

/// Everything the gates consult.
pub struct QcContext<'a> {
    pub config: QcConfig,
    pub lexicon: &'a AttributeLexicon,
    pub cues: &'a CueLexicon,
    pub synonyms: PhraseList,
    pub ambiguous: PhraseList,
    pub toxic: PhraseList,
    pub stereotype: PhraseList,
    pub attribute_verifier: Option<&'a dyn Verifier>,
    /// Classes are "0" and "1".
    pub label_verifier: Option<&'a dyn Verifier>,
}

impl<'a> QcContext<'a> {
    pub fn new(
        config: QcConfig,
        lexicon: &'a AttributeLexicon,
        cues: &'a CueLexicon,
    ) -> Result<Self, QcError> {
        config.validate()?;
        Ok(QcContext {
            synonyms: PhraseList::load_or(config.synonym_lexicon.as_deref(), SYNONYMS)?,
            ambiguous: PhraseList::load_or(config.ambiguous_lexicon.as_deref(), AMBIGUOUS)?,
            toxic: PhraseList::load_or(config.toxicity_lexicon.as_deref(), TOXIC)?,
            stereotype: PhraseList::load_or(config.stereotype_lexicon.as_deref(), STEREOTYPE)?,
            config,
            lexicon,
            cues,
            attribute_verifier: None,
            label_verifier: None,
        })
    }

    pub fn with_verifiers(
        mut self,
        attribute: Option<&'a dyn Verifier>,
        label: Option<&'a dyn Verifier>,
    ) -> Self {
        self.attribute_verifier = attribute;
        self.label_verifier = label;
        self
    }
}

fn report(gate_id: GateId, score: f64, threshold: f64, pass: bool, evidence: String) -> GateReport {
    GateReport {
        gate_id,
        score,
        threshold,
        pass,
        evidence,
    }
}

/// Count of terminal punctuation runs (`.`, `!`, `?`) followed by more text.
fn sentence_breaks(s: &str) -> usize {
    let trimmed = s.trim_end();
    let mut breaks = 0;
    let mut in_group = false;
    for c in trimmed.chars() {
        let terminal = matches!(c, '.' | '!' | '?');
        if terminal && !in_group {
            breaks += 1;
        }
        in_group = terminal;
    }
    // a final group closes the sentence and is not a break
    if trimmed.ends_with(['.', '!', '?']) {
        breaks -= 1;
    }
    breaks
}

pub fn gate_format(candidate: &str, original: &str, config: &QcConfig) -> GateReport {
    let [lo, hi] = config.length_ratio_bounds;
    let cand_len = text::tokenize(candidate).len();
    let orig_len = text::tokenize(original).len().max(1);
    let ratio = cand_len as f64 / orig_len as f64;
    let (pass, evidence) = if cand_len == 0 {
        (false, "empty candidate".to_string())
    } else if ratio < lo || ratio > hi {
        (false, format!("length ratio {ratio:.3} outside [{lo}, {hi}]"))
    } else if sentence_breaks(candidate) > 0 {
        (false, "more than one sentence".to_string())
    } else {
        (true, String::new())
    };
    report(GateId::Format, ratio, hi, pass, evidence)
}

pub fn gate_similarity(candidate: &str, original: &str, config: &QcConfig) -> GateReport {
    let score = text::tf_cosine(candidate, original);
    let pass = score >= config.similarity_min;
    let evidence = if pass {
        String::new()
    } else {
        format!("cosine {score:.4} below {}", config.similarity_min)
    };
    report(GateId::Similarity, score, config.similarity_min, pass, evidence)
}

/// Token inspection first; a unanimous vote for `target` passes outright.
/// Otherwise the attribute verifier decides, or, without one, the target's
/// share of matched attribute tokens.
pub fn gate_attribute(
    candidate: &str,
    target: &Attribute,
    ctx: &QcContext<'_>,
    require_classifier: bool,
) -> Result<GateReport, QcError> {
    let t = ctx.config.attr_conf_thresh;
    let guess = infer_attribute(candidate, ctx.lexicon);
    if &guess.attribute == target && guess.confidence >= 1.0 {
        return Ok(report(GateId::Attribute, 1.0, t, true, String::new()));
    }
    let (score, source) = match ctx.attribute_verifier {
        Some(v) => (v.probability(candidate, target.as_str()), "classifier"),
        None if require_classifier => return Err(QcError::MissingVerifier("attribute")),
        None => {
            let tokens = text::tokenize(candidate);
            let matched: Vec<&Attribute> =
                tokens.iter().filter_map(|tok| ctx.lexicon.lookup(tok)).collect();
            let hits = matched.iter().filter(|a| **a == target).count();
            let share = if matched.is_empty() {
                0.0
            } else {
                hits as f64 / matched.len() as f64
            };
            (share, "token share")
        }
    };
    let pass = score >= t;
    let evidence = if pass {
        String::new()
    } else {
        format!("{source} confidence {score:.4} for {target} below {t}")
    };
    Ok(report(GateId::Attribute, score, t, pass, evidence))
}

fn label_from_classifier(
    candidate: &str,
    original_label: u8,
    reason: String,
    ctx: &QcContext<'_>,
) -> Result<GateReport, QcError> {
    let t = ctx.config.label_conf_thresh;
    let v = ctx.label_verifier.ok_or(QcError::MissingVerifier("label"))?;
    let score = v.probability(candidate, if original_label == 1 { "1" } else { "0" });
    let pass = score >= t;
    let evidence = if pass {
        String::new()
    } else {
        format!("{reason}; classifier confidence {score:.4} below {t}")
    };
    Ok(report(GateId::Label, score, t, pass, evidence))
}

/// Cue logic decides when it can: a positive needs a cue or an approved
/// synonym, a negative must have no cue. Ambiguous money terms (and approved
/// synonyms in a negative) defer to the label verifier.
pub fn gate_label(candidate: &str, original_label: u8, ctx: &QcContext<'_>) -> Result<GateReport, QcError> {
    let t = ctx.config.label_conf_thresh;
    let tokens = text::tokenize(candidate);
    let cue = tokens.iter().find(|tok| ctx.cues.contains(tok)).cloned();
    let synonym = ctx.synonyms.first_match(&tokens);
    let ambiguous = ctx.ambiguous.first_match(&tokens);
    match (original_label, cue, synonym, ambiguous) {
        (1, Some(_), _, _) | (1, None, Some(_), _) => {
            Ok(report(GateId::Label, 1.0, t, true, String::new()))
        }
        (1, None, None, Some(term)) => label_from_classifier(
            candidate,
            1,
            format!("no cue, ambiguous term `{term}`"),
            ctx,
        ),
        (1, None, None, None) => Ok(report(
            GateId::Label,
            0.0,
            t,
            false,
            "label cue missing".to_string(),
        )),
        (_, Some(c), _, _) => Ok(report(
            GateId::Label,
            0.0,
            t,
            false,
            format!("cue `{c}` introduced into a negative"),
        )),
        (_, None, Some(term), _) | (_, None, None, Some(term)) => label_from_classifier(
            candidate,
            0,
            format!("negative mentions `{term}`"),
            ctx,
        ),
        (_, None, None, None) => Ok(report(GateId::Label, 1.0, t, true, String::new())),
    }
}

pub fn gate_safety(candidate: &str, ctx: &QcContext<'_>) -> GateReport {
    let tokens = text::tokenize(candidate);
    let hit = [&ctx.toxic, &ctx.stereotype]
        .iter()
        .filter_map(|l| l.first_match(&tokens).map(|m| (text::find_phrase(&tokens, &text::tokenize(&m)), m)))
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, m)| m);
    match hit {
        Some(m) => report(GateId::Safety, 0.0, 1.0, false, m),
        None => report(GateId::Safety, 1.0, 1.0, true, String::new()),
    }
}

/// All five per-candidate gates, no short-circuit. Accepted iff all pass.
pub fn run_gates(
    candidate: &Candidate,
    original: &Example,
    ctx: &QcContext<'_>,
) -> Result<(bool, Vec<GateReport>), QcError> {
    let reports = vec![
        gate_format(&candidate.text, &original.text, &ctx.config),
        gate_similarity(&candidate.text, &original.text, &ctx.config),
        gate_attribute(&candidate.text, &candidate.target_attribute, ctx, false)?,
        gate_label(&candidate.text, original.label, ctx)?,
        gate_safety(&candidate.text, ctx),
    ];
    Ok((reports.iter().all(|r| r.pass), reports))
}

/// Keep first occurrences. A later candidate is dropped when its normal form
/// equals any retained one, or when its similarity to a retained candidate
/// with the same source and target reaches `near_dup_min`.
pub fn dedup(accepted: &[Candidate], near_dup_min: f64) -> (Vec<Candidate>, Vec<GateReport>) {
    let mut retained: Vec<Candidate> = Vec::new();
    let mut forms: BTreeMap<String, String> = BTreeMap::new();
    let mut reports = Vec::with_capacity(accepted.len());
    for c in accepted {
        let form = text::normal_form(&c.text);
        if let Some(first) = forms.get(&form) {
            reports.push(report(GateId::Dedup, 1.0, near_dup_min, false, format!("exact duplicate of {first}")));
            continue;
        }
        let nearest = retained
            .iter()
            .filter(|r| r.source_id == c.source_id && r.target_attribute == c.target_attribute)
            .map(|r| (text::tf_cosine(&r.text, &c.text), r.id.as_str()))
            .max_by(|a, b| a.0.total_cmp(&b.0));
        let score = nearest.map_or(0.0, |(s, _)| s);
        if let Some((s, id)) = nearest.filter(|(s, _)| *s >= near_dup_min) {
            reports.push(report(GateId::Dedup, s, near_dup_min, false, format!("near duplicate of {id}")));
            continue;
        }
        reports.push(report(GateId::Dedup, score, near_dup_min, true, String::new()));
        forms.insert(form, c.id.clone());
        retained.push(c.clone());
    }
    (retained, reports)
}

/// Result of gating a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct QcOutcome {
    pub retained: Vec<Candidate>,
    pub log: Vec<QcLogRecord>,
}

impl QcOutcome {
    /// Per-gate scores of a candidate, read back from the log.
    pub fn scores(&self, candidate_id: &str) -> BTreeMap<GateId, f64> {
        self.log
            .iter()
            .filter(|r| r.candidate_id == candidate_id)
            .map(|r| (r.gate_id, r.score))
            .collect()
    }
}

/// Gate every candidate, then dedup the accepted ones in input order.
pub fn run_batch(
    candidates: &[Candidate],
    originals: &BTreeMap<String, &Example>,
    ctx: &QcContext<'_>,
) -> Result<QcOutcome, QcError> {
    let mut log = Vec::new();
    let mut accepted = Vec::new();
    for c in candidates {
        let original = originals
            .get(&c.source_id)
            .ok_or_else(|| QcError::MissingSource(c.id.clone()))?;
        let (ok, reports) = run_gates(c, original, ctx)?;
        log.extend(reports.iter().map(|r| QcLogRecord::new(&c.id, r)));
        if ok {
            accepted.push(c.clone());
        }
    }
    let (retained, dedup_reports) = dedup(&accepted, ctx.config.near_dup_min);
    for (c, r) in accepted.iter().zip(&dedup_reports) {
        log.push(QcLogRecord::new(&c.id, r));
    }
    Ok(QcOutcome { retained, log })
}

/// Candidate ids that passed every logged gate, in first-seen order.
pub fn accepted_from_log(log: &[QcLogRecord]) -> Vec<String> {
    let mut order = Vec::new();
    let mut state: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
    for r in log {
        let e = state.entry(&r.candidate_id).or_insert_with(|| {
            order.push(r.candidate_id.clone());
            (true, false)
        });
        e.0 &= r.pass;
        e.1 |= r.gate_id == GateId::Dedup;
    }
    order
        .into_iter()
        .filter(|id| state[id.as_str()] == (true, true))
        .collect()
}

pub fn write_qc_log(path: &Path, log: &[QcLogRecord]) -> Result<(), QcError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_qc_log(path: &Path) -> Result<Vec<QcLogRecord>, QcError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| QcError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
