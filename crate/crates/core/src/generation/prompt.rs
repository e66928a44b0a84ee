use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GenerationError;
use crate::corpus::Attribute;

pub const TARGET_PLACEHOLDER: &str = "[TARGET_ATTRIBUTE]";
pub const SENTENCE_PLACEHOLDER: &str = "[ORIGINAL_SENTENCE]";

const LABEL_PRESERVING: &str = include_str!("../../data/prompts/label_preserving.txt");
const MINIMAL: &str = include_str!("../../data/prompts/minimal.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
}

/// Literal text around the two placeholders, in body order.
struct Pieces<'a> {
    head: &'a str,
    middle: &'a str,
    tail: &'a str,
    target_first: bool,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Result<Self, GenerationError> {
        let t = PromptTemplate {
            id: id.into(),
            body: body.into(),
        };
        t.pieces()?;
        Ok(t)
    }

    /// The label-preserving rewrite prompt.
    pub fn label_preserving() -> Self {
        PromptTemplate::new("label_preserving", LABEL_PRESERVING.trim_end())
            .expect("shipped template is valid")
    }

    pub fn minimal() -> Self {
        PromptTemplate::new("minimal", MINIMAL.trim_end()).expect("shipped template is valid")
    }

    pub fn builtin(id: &str) -> Option<Self> {
        match id {
            "label_preserving" => Some(Self::label_preserving()),
            "minimal" => Some(Self::minimal()),
            _ => None,
        }
    }

    /// Load a template file; the file stem becomes the id. A single trailing
    /// newline is not part of the body.
    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        let body = fs::read_to_string(path)?;
        let body = body.strip_suffix('\n').unwrap_or(&body);
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("custom")
            .to_string();
        PromptTemplate::new(id, body)
    }

    fn pieces(&self) -> Result<Pieces<'_>, GenerationError> {
        for p in [TARGET_PLACEHOLDER, SENTENCE_PLACEHOLDER] {
            let count = self.body.matches(p).count();
            if count != 1 {
                return Err(GenerationError::InvalidTemplate(format!(
                    "template `{}` has {count} occurrences of {p}, expected 1",
                    self.id
                )));
            }
        }
        let t = self.body.find(TARGET_PLACEHOLDER).unwrap_or_default();
        let s = self.body.find(SENTENCE_PLACEHOLDER).unwrap_or_default();
        let (first, first_len, second, second_len) = if t < s {
            (t, TARGET_PLACEHOLDER.len(), s, SENTENCE_PLACEHOLDER.len())
        } else {
            (s, SENTENCE_PLACEHOLDER.len(), t, TARGET_PLACEHOLDER.len())
        };
        Ok(Pieces {
            head: &self.body[..first],
            middle: &self.body[first + first_len..second],
            tail: &self.body[second + second_len..],
            target_first: t < s,
        })
    }

    /// Recover `(target, sentence)` from a prompt rendered by this template.
    pub fn parse(&self, prompt: &str) -> Option<(String, String)> {
        let p = self.pieces().ok()?;
        let inner = prompt.strip_prefix(p.head)?.strip_suffix(p.tail)?;
        // the target never contains template text, so split on the side next to it
        let split = if p.target_first {
            inner.find(p.middle)?
        } else {
            inner.rfind(p.middle)?
        };
        let (a, b) = (&inner[..split], &inner[split + p.middle.len()..]);
        let (target, sentence) = if p.target_first { (a, b) } else { (b, a) };
        Some((target.to_string(), sentence.to_string()))
    }
}

/// Substitute the target attribute and sentence at the placeholder
/// positions. Placeholder-like text inside the arguments is left alone.
pub fn render_prompt(
    template: &PromptTemplate,
    target: &Attribute,
    sentence: &str,
) -> Result<String, GenerationError> {
    if sentence.trim().is_empty() {
        return Err(GenerationError::EmptySentence);
    }
    let p = template.pieces()?;
    let (first, second) = if p.target_first {
        (target.as_str(), sentence)
    } else {
        (sentence, target.as_str())
    };
    Ok([p.head, first, p.middle, second, p.tail].concat())
}
