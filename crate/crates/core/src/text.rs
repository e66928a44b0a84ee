//! Shared text normalization.
//!
//! Every stage that looks at tokens (attribute inference, label extraction,
//! swapping, the QC gates and the featurizer) goes through this module, so
//! they all agree on what a token is: a maximal run of alphanumeric
//! characters, lowercased.

use std::collections::BTreeMap;
use std::ops::Range;

/// A token together with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub norm: String,
    pub span: Range<usize>,
}

/// Lowercased alphanumeric tokens of `text`, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text).into_iter().map(|t| t.norm).collect()
}

/// Tokens with their byte offsets into `text`.
pub fn token_spans(text: &str) -> Vec<TokenSpan> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            out.push(TokenSpan {
                norm: text[s..i].to_lowercase(),
                span: s..i,
            });
        }
    }
    if let Some(s) = start {
        out.push(TokenSpan {
            norm: text[s..].to_lowercase(),
            span: s..text.len(),
        });
    }
    out
}

/// Tokens joined by single spaces. Two texts with equal normal forms are
/// treated as exact duplicates.
pub fn normal_form(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Collapse runs of whitespace and trim.
pub fn squash_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Term-frequency bag.
pub fn term_counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Cosine similarity of raw term-frequency vectors. Two empty texts have
/// similarity 0.
pub fn tf_cosine(a: &str, b: &str) -> f64 {
    let ta = tokenize(a);
    let tb = tokenize(b);
    let ca = term_counts(&ta);
    let cb = term_counts(&tb);
    let dot: usize = ca
        .iter()
        .filter_map(|(t, n)| cb.get(t).map(|m| n * m))
        .sum();
    let na: usize = ca.values().map(|n| n * n).sum();
    let nb: usize = cb.values().map(|n| n * n).sum();
    if na == 0 || nb == 0 {
        return 0.0;
    }
    dot as f64 / ((na as f64).sqrt() * (nb as f64).sqrt())
}

/// Parse a plain-text list file: one entry per line, `#` starts a comment,
/// blank lines ignored. Entries are whitespace-squashed and lowercased.
pub fn parse_list(contents: &str) -> Vec<String> {
    contents
        .lines()
        .map(|l| match l.find('#') {
            Some(i) => &l[..i],
            None => l,
        })
        .map(|l| squash_whitespace(l).to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Find the first occurrence of `phrase` (a token sequence) inside `tokens`.
pub fn find_phrase(tokens: &[String], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return None;
    }
    tokens.windows(phrase.len()).position(|w| w == phrase)
}

/// Copy the casing pattern of `source` onto `replacement`: all-caps stays
/// all-caps, a capitalized first letter stays capitalized.
pub fn match_case(source: &str, replacement: &str) -> String {
    let mut letters = source.chars().filter(|c| c.is_alphabetic());
    let first_upper = letters.next().map(char::is_uppercase).unwrap_or(false);
    let alpha_count = source.chars().filter(|c| c.is_alphabetic()).count();
    let all_upper = alpha_count > 1
        && source
            .chars()
            .filter(|c| c.is_alphabetic())
            .all(char::is_uppercase);
    if all_upper {
        return replacement.to_uppercase();
    }
    if first_upper {
        let mut chars = replacement.chars();
        return match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
    }
    replacement.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits_on_punctuation() {
        assert_eq!(
            tokenize("Cash only, please."),
            vec!["cash", "only", "please"]
        );
        assert_eq!(tokenize("  "), Vec::<String>::new());
        assert_eq!(tokenize("don't"), vec!["don", "t"]);
    }

    #[test]
    fn spans_point_into_source() {
        let text = "He paid, then left.";
        for t in token_spans(text) {
            assert_eq!(text[t.span.clone()].to_lowercase(), t.norm);
        }
    }

    #[test]
    fn cosine_extremes() {
        assert!((tf_cosine("a b c", "a b c") - 1.0).abs() < 1e-12);
        assert_eq!(tf_cosine("a b", "c d"), 0.0);
        assert_eq!(tf_cosine("", "c d"), 0.0);
    }

    #[test]
    fn case_matching() {
        assert_eq!(match_case("He", "she"), "She");
        assert_eq!(match_case("he", "she"), "she");
        assert_eq!(match_case("HE", "she"), "SHE");
        assert_eq!(match_case("I", "we"), "We");
    }

    #[test]
    fn list_parsing_skips_comments() {
        let parsed = parse_list("# header\nhe\n\n  Shut   Up  # phrase\n");
        assert_eq!(parsed, vec!["he", "shut up"]);
    }
}
