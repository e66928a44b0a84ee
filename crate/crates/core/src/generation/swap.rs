use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::GenerationError;
use crate::text;

const GENDER: &str = include_str!("../../data/swap/gender.txt");

/// Words that do not start a noun phrase; a pronoun followed by one of these
/// is in object or predicative position.
const NON_NOUN_FOLLOWERS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "an", "and", "as", "at", "back", "because",
    "before", "but", "by", "down", "during", "for", "from", "here", "home", "if", "in", "into",
    "is", "now", "of", "off", "on", "once", "or", "out", "over", "so", "than", "that", "the",
    "then", "there", "this", "to", "today", "tomorrow", "too", "up", "was", "when", "while",
    "with", "yesterday",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Any,
    /// Determiner use: followed by a content word in the same clause.
    BeforeNoun,
    Standalone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    target: String,
    position: Position,
}

/// Bidirectional token substitution table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SwapTable {
    map: BTreeMap<String, Vec<Entry>>,
}

impl SwapTable {
    /// Pronoun and name pairs for the male/female axis.
    pub fn default_gender() -> Self {
        SwapTable::parse(GENDER).expect("shipped swap table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        SwapTable::parse(&fs::read_to_string(path)?)
    }

    /// Lines of `left right [@before-noun|@standalone]`.
    pub fn parse(contents: &str) -> Result<Self, GenerationError> {
        let mut table = SwapTable::default();
        for line in text::parse_list(contents) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let position = match fields.get(2) {
                None => Position::Any,
                Some(&"@before-noun") => Position::BeforeNoun,
                Some(&"@standalone") => Position::Standalone,
                Some(tag) => {
                    return Err(GenerationError::SwapTable(format!("unknown tag `{tag}`")))
                }
            };
            if fields.len() < 2 || fields.len() > 3 {
                return Err(GenerationError::SwapTable(format!("malformed line `{line}`")));
            }
            table.add(fields[0], fields[1], position);
            table.add(fields[1], fields[0], position);
        }
        Ok(table)
    }

    fn add(&mut self, from: &str, to: &str, position: Position) {
        let entries = self.map.entry(from.to_string()).or_default();
        let entry = Entry {
            target: to.to_string(),
            position,
        };
        if !entries.contains(&entry) {
            entries.push(entry);
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.map.contains_key(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    fn resolve(&self, token: &str, position: Position) -> Option<&str> {
        let entries = self.map.get(token)?;
        if entries.len() == 1 {
            return Some(&entries[0].target);
        }
        entries
            .iter()
            .find(|e| e.position == position)
            .or_else(|| entries.iter().find(|e| e.position == Position::Any))
            .or(entries.first())
            .map(|e| e.target.as_str())
    }
}

/// Replace every table token, copying the casing of the replaced token.
/// Text between tokens is preserved byte for byte.
pub fn rule_swap(input: &str, table: &SwapTable) -> String {
    let spans = text::token_spans(input);
    let mut out = String::with_capacity(input.len() + 8);
    let mut last = 0;
    for (i, tok) in spans.iter().enumerate() {
        let position = match spans.get(i + 1) {
            Some(next)
                if input[tok.span.end..next.span.start].trim().is_empty()
                    && !NON_NOUN_FOLLOWERS.contains(&next.norm.as_str()) =>
            {
                Position::BeforeNoun
            }
            _ => Position::Standalone,
        };
        if let Some(target) = table.resolve(&tok.norm, position) {
            out.push_str(&input[last..tok.span.start]);
            out.push_str(&text::match_case(&input[tok.span.clone()], target));
            last = tok.span.end;
        }
    }
    out.push_str(&input[last..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn technician_sentence() {
        let t = SwapTable::default_gender();
        assert_eq!(
            rule_swap("The technician told the customer that he could pay with cash.", &t),
            "The technician told the customer that she could pay with cash."
        );
    }

    #[test]
    fn naive_swap_keeps_unpaired_words() {
        let t = SwapTable::default_gender();
        assert_eq!(
            rule_swap("He mans the grill during every family cookout.", &t),
            "She mans the grill during every family cookout."
        );
    }

    #[test]
    fn possessive_and_object_forms() {
        let t = SwapTable::default_gender();
        assert_eq!(rule_swap("His friend called him.", &t), "Her friend called her.");
        assert_eq!(rule_swap("Her friend called her.", &t), "His friend called him.");
        assert_eq!(rule_swap("The book is hers.", &t), "The book is his.");
        assert_eq!(rule_swap("The book is his.", &t), "The book is hers.");
        assert_eq!(rule_swap("She paid her at noon.", &t), "He paid him at noon.");
        assert_eq!(rule_swap("JAMES met Mary.", &t), "MARY met James.");
    }

    #[test]
    fn bad_lines_rejected() {
        assert!(SwapTable::parse("he she @sideways").is_err());
        assert!(SwapTable::parse("he").is_err());
    }

    proptest! {
        #[test]
        fn involution_on_unambiguous_pairs(
            words in prop::collection::vec(
                prop::sample::select(vec![
                    "he", "she", "He", "She", "himself", "herself", "man", "woman",
                    "the", "customer", "paid", "with", "cash", "James", "mary", "and",
                ]),
                1..16,
            ),
            sep in prop::sample::select(vec![" ", ", ", "  "]),
        ) {
            let t = SwapTable::default_gender();
            let s = format!("{}.", words.join(sep));
            prop_assert_eq!(rule_swap(&rule_swap(&s, &t), &t), s.clone());
            let cues = crate::corpus::CueLexicon::default_cash();
            prop_assert_eq!(
                crate::corpus::extract_label(&rule_swap(&s, &t), &cues),
                crate::corpus::extract_label(&s, &cues)
            );
        }
    }
}
