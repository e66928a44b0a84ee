use std::fs;
use std::path::Path;

use rand::Rng;

use super::GenerationError;
use crate::corpus::{AttributeLexicon, CueLexicon};
use crate::text;

const VARIATIONS: &str = include_str!("../../data/paraphrase/variations.txt");

#[derive(Debug, Clone, PartialEq)]
struct Variation {
    phrase: Vec<String>,
    alternative: String,
}

/// Phrase-level rewrites used to vary surface form. No entry touches a label
/// cue or an attribute token, so rewriting never changes label or attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationTable {
    // longest phrase first so overlapping entries prefer the longer match
    entries: Vec<Variation>,
}

impl VariationTable {
    pub fn default_table() -> Self {
        VariationTable::parse(
            VARIATIONS,
            &CueLexicon::default_cash(),
            &AttributeLexicon::default_gender(),
        )
        .expect("shipped variation table is valid")
    }

    pub fn load(
        path: &Path,
        cues: &CueLexicon,
        lexicon: &AttributeLexicon,
    ) -> Result<Self, GenerationError> {
        VariationTable::parse(&fs::read_to_string(path)?, cues, lexicon)
    }

    /// Lines of `phrase => alternative`.
    pub fn parse(
        contents: &str,
        cues: &CueLexicon,
        lexicon: &AttributeLexicon,
    ) -> Result<Self, GenerationError> {
        let mut entries = Vec::new();
        for line in text::parse_list(contents) {
            let (phrase, alternative) = line.split_once("=>").ok_or_else(|| {
                GenerationError::InvalidVariation(format!("missing `=>` in `{line}`"))
            })?;
            let phrase = text::tokenize(phrase);
            let alternative = text::squash_whitespace(alternative);
            if phrase.is_empty() || alternative.is_empty() {
                return Err(GenerationError::InvalidVariation(format!("empty side in `{line}`")));
            }
            let touched = phrase.iter().chain(text::tokenize(&alternative).iter()).find(|t| {
                cues.contains(t) || lexicon.lookup(t).is_some()
            }).cloned();
            if let Some(t) = touched {
                return Err(GenerationError::InvalidVariation(format!(
                    "`{line}` touches protected token `{t}`"
                )));
            }
            entries.push(Variation {
                phrase,
                alternative,
            });
        }
        entries.sort_by_key(|e| std::cmp::Reverse(e.phrase.len()));
        Ok(VariationTable { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Single left-to-right pass; each matching phrase is rewritten with
    /// probability `rate`. Rewritten text is never matched again.
    pub fn apply<R: Rng>(&self, input: &str, rate: f64, rng: &mut R) -> String {
        let spans = text::token_spans(input);
        let norms: Vec<String> = spans.iter().map(|s| s.norm.clone()).collect();
        let mut out = String::with_capacity(input.len());
        let mut last = 0;
        let mut i = 0;
        while i < spans.len() {
            let hit = self
                .entries
                .iter()
                .find(|e| norms[i..].starts_with(&e.phrase));
            match hit {
                Some(e) if rng.gen_bool(rate) => {
                    let start = spans[i].span.start;
                    let end = spans[i + e.phrase.len() - 1].span.end;
                    out.push_str(&input[last..start]);
                    out.push_str(&text::match_case(&input[spans[i].span.clone()], &e.alternative));
                    last = end;
                    i += e.phrase.len();
                }
                _ => i += 1,
            }
        }
        out.push_str(&input[last..]);
        out
    }
}
