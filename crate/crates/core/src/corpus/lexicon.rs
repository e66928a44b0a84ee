use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::{Attribute, CorpusError};
use crate::text;

const MALE: &str = include_str!("../../data/lexicon/attribute/male.txt");
const FEMALE: &str = include_str!("../../data/lexicon/attribute/female.txt");
const CUES: &str = include_str!("../../data/lexicon/label_cues.txt");

/// Token → attribute table used by attribute inference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributeLexicon {
    tokens: BTreeMap<String, Attribute>,
}

impl AttributeLexicon {
    /// The shipped pronoun and name lists for the male/female axis.
    pub fn default_gender() -> Self {
        let mut lex = AttributeLexicon::default();
        lex.add_list(Attribute::new("male"), MALE)
            .expect("shipped lexicon is consistent");
        lex.add_list(Attribute::new("female"), FEMALE)
            .expect("shipped lexicon is consistent");
        lex
    }

    /// Load every `<attribute>.txt` file in `dir`; the file stem names the
    /// attribute value.
    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(CorpusError::Lexicon(format!(
                "no attribute lists in {}",
                dir.display()
            )));
        }
        let mut lex = AttributeLexicon::default();
        for p in paths {
            let stem = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| CorpusError::Lexicon(format!("bad file name {}", p.display())))?;
            lex.add_list(Attribute::new(stem), &fs::read_to_string(&p)?)?;
        }
        Ok(lex)
    }

    /// Add the entries of a list file under `attribute`. A token claimed by
    /// two attributes is an error.
    pub fn add_list(&mut self, attribute: Attribute, contents: &str) -> Result<(), CorpusError> {
        for entry in text::parse_list(contents) {
            self.insert(&entry, attribute.clone())?;
        }
        Ok(())
    }

    pub fn insert(&mut self, token: &str, attribute: Attribute) -> Result<(), CorpusError> {
        let normalized = text::tokenize(token);
        if normalized.len() != 1 {
            return Err(CorpusError::Lexicon(format!(
                "entry `{token}` is not a single token"
            )));
        }
        let key = normalized.into_iter().next().unwrap_or_default();
        match self.tokens.get(&key) {
            Some(existing) if *existing != attribute => Err(CorpusError::Lexicon(format!(
                "token `{key}` listed for both {existing} and {attribute}"
            ))),
            _ => {
                self.tokens.insert(key, attribute);
                Ok(())
            }
        }
    }

    pub fn lookup(&self, token: &str) -> Option<&Attribute> {
        self.tokens.get(token)
    }

    /// Attribute values in the domain, sorted.
    pub fn attributes(&self) -> Vec<Attribute> {
        self.tokens
            .values()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn tokens_for<'a>(&'a self, attribute: &'a Attribute) -> impl Iterator<Item = &'a str> + 'a {
        self.tokens
            .iter()
            .filter(move |(_, a)| *a == attribute)
            .map(|(t, _)| t.as_str())
    }
}

/// Tokens whose presence sets the label to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CueLexicon {
    cues: BTreeSet<String>,
}

impl CueLexicon {
    pub fn new<I, S>(cues: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let cues: BTreeSet<String> = cues
            .into_iter()
            .flat_map(|c| text::tokenize(c.as_ref()))
            .collect();
        if cues.is_empty() {
            return Err(CorpusError::Lexicon("cue lexicon is empty".into()));
        }
        Ok(CueLexicon { cues })
    }

    /// `{"cash"}`.
    pub fn default_cash() -> Self {
        CueLexicon::new(text::parse_list(CUES)).expect("shipped cue list is non-empty")
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        CueLexicon::new(text::parse_list(&fs::read_to_string(path)?))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.cues.contains(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.cues.iter().map(String::as_str)
    }
}
