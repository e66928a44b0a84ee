//! Template-based generator of gendered cash / no-cash sentences.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{
    extract_label, Attribute, AttributeProvenance, AttributeSource, CueLexicon, Example,
    LabelProvenance, LabelSource, Origin,
};
use crate::text;

pub const SUBJECT_SLOT: &str = "[SUBJECT_PRONOUN]";
pub const PROFESSION_SLOT: &str = "[PROFESSION]";
pub const CLAUSE_SLOT: &str = "[PAYMENT_CLAUSE]";

const TEMPLATES: &str = include_str!("../data/synth/templates.txt");
const PROFESSIONS: &str = include_str!("../data/synth/professions.txt");
const POSITIVE: &str = include_str!("../data/synth/positive_clauses.txt");
const NEGATIVE: &str = include_str!("../data/synth/negative_clauses.txt");

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid template set: {0}")]
    InvalidTemplates(String),
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub templates: Vec<String>,
    pub professions: Vec<String>,
    pub positive_clauses: Vec<String>,
    pub negative_clauses: Vec<String>,
}

impl TemplateSet {
    pub fn new(
        templates: Vec<String>,
        professions: Vec<String>,
        positive_clauses: Vec<String>,
        negative_clauses: Vec<String>,
    ) -> Result<Self, SynthError> {
        let set = TemplateSet {
            templates,
            professions,
            positive_clauses,
            negative_clauses,
        };
        set.validate(&CueLexicon::default_cash())?;
        Ok(set)
    }

    /// The shipped set: long-form skeletons around the "pay with cash" motif.
    pub fn default_set() -> Self {
        TemplateSet::new(
            raw_lines(TEMPLATES),
            text::parse_list(PROFESSIONS),
            expand_lines(POSITIVE),
            expand_lines(NEGATIVE),
        )
        .expect("shipped template set is valid")
    }

    /// Load `templates.txt`, `professions.txt`, `positive_clauses.txt` and
    /// `negative_clauses.txt` from `dir`.
    pub fn load_dir(dir: &Path, cues: &CueLexicon) -> Result<Self, SynthError> {
        let read = |name: &str| fs::read_to_string(dir.join(name));
        let set = TemplateSet {
            templates: raw_lines(&read("templates.txt")?),
            professions: text::parse_list(&read("professions.txt")?),
            positive_clauses: expand_lines(&read("positive_clauses.txt")?),
            negative_clauses: expand_lines(&read("negative_clauses.txt")?),
        };
        set.validate(cues)?;
        Ok(set)
    }

    pub fn validate(&self, cues: &CueLexicon) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidTemplates(m));
        if self.templates.is_empty() {
            return bad("no templates".into());
        }
        for t in &self.templates {
            if t.matches(SUBJECT_SLOT).count() != 1 {
                return bad(format!("template needs exactly one {SUBJECT_SLOT}: {t}"));
            }
            if t.matches(CLAUSE_SLOT).count() != 1 {
                return bad(format!("template needs exactly one {CLAUSE_SLOT}: {t}"));
            }
            if t.contains(PROFESSION_SLOT) && self.professions.is_empty() {
                return bad("templates use [PROFESSION] but no professions given".into());
            }
        }
        for c in &self.positive_clauses {
            if extract_label(c, cues) != 1 {
                return bad(format!("positive clause without a cue: {c}"));
            }
        }
        for c in &self.negative_clauses {
            if extract_label(c, cues) != 0 {
                return bad(format!("negative clause contains a cue: {c}"));
            }
        }
        Ok(())
    }
}

fn raw_lines(contents: &str) -> Vec<String> {
    contents
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Expand `{a|b}` groups into one line per combination.
fn expand_lines(contents: &str) -> Vec<String> {
    raw_lines(contents)
        .iter()
        .flat_map(|l| expand(l))
        .map(|l| text::squash_whitespace(&l))
        .collect()
}

fn expand(line: &str) -> Vec<String> {
    let Some(open) = line.find('{') else {
        return vec![line.to_string()];
    };
    let Some(close) = line[open..].find('}').map(|i| open + i) else {
        return vec![line.to_string()];
    };
    let head = &line[..open];
    let rest = expand(&line[close + 1..]);
    line[open + 1..close]
        .split('|')
        .flat_map(|opt| rest.iter().map(move |r| format!("{head}{opt}{r}")))
        .collect()
}

fn subject_pronoun(attribute: &str) -> &'static str {
    if attribute == "male" {
        "he"
    } else {
        "she"
    }
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn rounded(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Generate `n` examples with exactly `round(n * male_fraction)` male and
/// `round(n * positive_fraction)` positive examples. Gender and label are
/// shuffled independently.
pub fn generate_corpus(
    templates: &TemplateSet,
    n: usize,
    male_fraction: f64,
    positive_fraction: f64,
    seed: u64,
) -> Result<Vec<Example>, SynthError> {
    if n < 4 {
        return Err(SynthError::Infeasible(format!("n = {n} is below 4")));
    }
    for (name, f) in [
        ("male_fraction", male_fraction),
        ("positive_fraction", positive_fraction),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return Err(SynthError::Infeasible(format!("{name} = {f} outside [0, 1]")));
        }
    }
    let n_male = rounded(n, male_fraction);
    let n_pos = rounded(n, positive_fraction);
    if n_pos > 0 && templates.positive_clauses.is_empty() {
        return Err(SynthError::Infeasible("positives requested but no positive clauses".into()));
    }
    if n_pos < n && templates.negative_clauses.is_empty() {
        return Err(SynthError::Infeasible("negatives requested but no negative clauses".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut genders: Vec<bool> = (0..n).map(|i| i < n_male).collect();
    genders.shuffle(&mut rng);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);

    let width = n.to_string().len().max(5);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let attribute = if genders[i] { "male" } else { "female" };
        let label = labels[i];
        let template = &templates.templates[rng.gen_range(0..templates.templates.len())];
        let clauses = if label == 1 {
            &templates.positive_clauses
        } else {
            &templates.negative_clauses
        };
        let clause = &clauses[rng.gen_range(0..clauses.len())];
        let mut sentence = template
            .replace(SUBJECT_SLOT, subject_pronoun(attribute))
            .replace(CLAUSE_SLOT, clause);
        if sentence.contains(PROFESSION_SLOT) {
            let p = &templates.professions[rng.gen_range(0..templates.professions.len())];
            sentence = sentence.replace(PROFESSION_SLOT, p);
        }
        let pronoun = subject_pronoun(attribute);
        out.push(Example {
            id: format!("syn-{i:0width$}"),
            text: capitalize_first(&sentence),
            attribute: Attribute::new(attribute),
            label,
            origin: Origin::Original,
            attribute_provenance: Some(AttributeProvenance {
                source: AttributeSource::Metadata,
                confidence: 1.0,
                evidence: pronoun.to_string(),
            }),
            label_provenance: Some(LabelProvenance {
                source: LabelSource::Metadata,
                evidence: if label == 1 { "cash".into() } else { String::new() },
            }),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_is_cartesian() {
        assert_eq!(expand("a {b|c} d {e|f}").len(), 4);
        assert_eq!(expand("plain"), vec!["plain"]);
    }

    #[test]
    fn default_set_shape() {
        let t = TemplateSet::default_set();
        assert!(t.templates.len() >= 10);
        assert!(t.positive_clauses.iter().any(|c| c == "could pay with cash"));
        assert!(!t.negative_clauses.is_empty());
    }

    #[test]
    fn rejects_bad_sets() {
        let ok = TemplateSet::default_set();
        let mut two = ok.clone();
        two.templates = vec!["[SUBJECT_PRONOUN] and [SUBJECT_PRONOUN] [PAYMENT_CLAUSE].".into()];
        assert!(two.validate(&CueLexicon::default_cash()).is_err());
        let mut leak = ok.clone();
        leak.negative_clauses.push("paid in cash".into());
        assert!(leak.validate(&CueLexicon::default_cash()).is_err());
    }

    #[test]
    fn small_or_bad_requests_fail() {
        let t = TemplateSet::default_set();
        assert!(generate_corpus(&t, 3, 0.5, 0.5, 0).is_err());
        assert!(generate_corpus(&t, 10, 1.2, 0.5, 0).is_err());
    }
}
