use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    extract_label, first_cue, infer_attribute, Attribute, AttributeLexicon, AttributeProvenance,
    AttributeSource, CorpusError, CueLexicon, Example, LabelProvenance, LabelSource, Origin,
};

/// A raw corpus line. Missing attribute or label triggers inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
}

impl CorpusRecord {
    /// Canonicalize into an [`Example`], inferring whatever metadata is absent.
    pub fn into_example(
        self,
        lexicon: &AttributeLexicon,
        cues: &CueLexicon,
    ) -> Result<Example, CorpusError> {
        let (attribute, attribute_provenance) = match self.attribute {
            Some(a) if !a.trim().is_empty() => {
                let attribute = Attribute::new(a);
                (
                    attribute,
                    AttributeProvenance {
                        source: AttributeSource::Metadata,
                        confidence: 1.0,
                        evidence: String::new(),
                    },
                )
            }
            _ => {
                let guess = infer_attribute(&self.text, lexicon);
                (
                    guess.attribute,
                    AttributeProvenance {
                        source: AttributeSource::Inferred,
                        confidence: guess.confidence,
                        evidence: guess.evidence,
                    },
                )
            }
        };
        let (label, label_provenance) = match self.label {
            Some(l) => (
                l,
                LabelProvenance {
                    source: LabelSource::Metadata,
                    evidence: String::new(),
                },
            ),
            None => (
                extract_label(&self.text, cues),
                LabelProvenance {
                    source: LabelSource::Cue,
                    evidence: first_cue(&self.text, cues).unwrap_or_default(),
                },
            ),
        };
        let example = Example {
            id: self.id,
            text: self.text,
            attribute,
            label,
            origin: self.origin.unwrap_or(Origin::Original),
            attribute_provenance: Some(attribute_provenance),
            label_provenance: Some(label_provenance),
        };
        example.validate()?;
        Ok(example)
    }
}

fn parse_lines<T, F>(path: &Path, mut f: F) -> Result<Vec<T>, CorpusError>
where
    F: FnMut(&str) -> Result<T, String>,
{
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(f(&line).map_err(|reason| CorpusError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            reason,
        })?);
    }
    Ok(out)
}

/// Read a corpus file of [`CorpusRecord`] lines and canonicalize it.
pub fn read_corpus(
    path: &Path,
    lexicon: &AttributeLexicon,
    cues: &CueLexicon,
) -> Result<Vec<Example>, CorpusError> {
    let records: Vec<CorpusRecord> =
        parse_lines(path, |l| serde_json::from_str(l).map_err(|e| e.to_string()))?;
    records
        .into_iter()
        .map(|r| r.into_example(lexicon, cues))
        .collect()
}

/// Read fully canonical examples.
pub fn read_examples(path: &Path) -> Result<Vec<Example>, CorpusError> {
    let examples: Vec<Example> =
        parse_lines(path, |l| serde_json::from_str(l).map_err(|e| e.to_string()))?;
    for e in &examples {
        e.validate()?;
    }
    Ok(examples)
}

pub fn write_examples(path: &Path, examples: &[Example]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in examples {
        serde_json::to_writer(&mut w, e).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

const PRONOUN_SETS: [(&str, &str, &str, &str); 2] = [
    ("male", "he", "his", "him"),
    ("female", "she", "her", "her"),
];

/// Ingest Winogender-style tab-separated rows `(occupation, participant,
/// answer, sentence)`. Sentences with `$OCCUPATION`, `$PARTICIPANT`,
/// `$NOM_PRONOUN`, `$POSS_PRONOUN` and `$ACC_PRONOUN` placeholders are
/// instantiated once per gendered pronoun set; literal sentences are taken
/// as-is. A header row whose first field is `occupation` is skipped.
pub fn ingest_winogender(
    path: &Path,
    lexicon: &AttributeLexicon,
    cues: &CueLexicon,
) -> Result<Vec<Example>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_path(path)
        .map_err(|e| CorpusError::Io(std::io::Error::other(e)))?;
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: row + 1,
            reason: e.to_string(),
        })?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        if row == 0 && field(0).eq_ignore_ascii_case("occupation") {
            continue;
        }
        if record.len() < 4 {
            return Err(CorpusError::Parse {
                path: path.display().to_string(),
                line: row + 1,
                reason: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let (occupation, participant, sentence) = (field(0), field(1), field(3));
        let base = sentence
            .replace("$OCCUPATION", occupation)
            .replace("$PARTICIPANT", participant);
        let instances: Vec<(Option<&str>, String)> = if base.contains('$') {
            PRONOUN_SETS
                .iter()
                .map(|(attr, nom, poss, acc)| {
                    (
                        Some(*attr),
                        base.replace("$NOM_PRONOUN", nom)
                            .replace("$POSS_PRONOUN", poss)
                            .replace("$ACC_PRONOUN", acc),
                    )
                })
                .collect()
        } else {
            vec![(None, base)]
        };
        for (attr, text) in instances {
            let id = match attr {
                Some(a) => format!("wg-{:04}-{a}", row + 1),
                None => format!("wg-{:04}", row + 1),
            };
            let record = CorpusRecord {
                id,
                text,
                attribute: attr.map(str::to_string),
                label: None,
                origin: None,
            };
            out.push(record.into_example(lexicon, cues)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_inference_fills_provenance() {
        let r = CorpusRecord {
            id: "t1".into(),
            text: "The technician told the customer that he could pay with cash.".into(),
            attribute: None,
            label: None,
            origin: None,
        };
        let e = r
            .into_example(&AttributeLexicon::default_gender(), &CueLexicon::default_cash())
            .unwrap();
        assert_eq!(e.attribute, Attribute::new("male"));
        assert_eq!(e.label, 1);
        let ap = e.attribute_provenance.unwrap();
        assert_eq!(ap.source, AttributeSource::Inferred);
        assert_eq!(ap.evidence, "he");
        let lp = e.label_provenance.unwrap();
        assert_eq!(lp.source, LabelSource::Cue);
        assert_eq!(lp.evidence, "cash");
    }

    #[test]
    fn winogender_rows_instantiate_per_gender() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("templates.tsv");
        fs::write(
            &path,
            "occupation\tother-participant\tanswer\tsentence\n\
             technician\tcustomer\t1\tThe $OCCUPATION told the $PARTICIPANT that $NOM_PRONOUN could pay with cash.\n\
             nurse\tpatient\t0\tThe nurse said she was busy.\n",
        )
        .unwrap();
        let ex = ingest_winogender(
            &path,
            &AttributeLexicon::default_gender(),
            &CueLexicon::default_cash(),
        )
        .unwrap();
        assert_eq!(ex.len(), 3);
        assert_eq!(
            ex[1].text,
            "The technician told the customer that she could pay with cash."
        );
        assert_eq!(ex[1].attribute, Attribute::new("female"));
        assert_eq!(ex[0].label, 1);
        assert_eq!(ex[2].attribute, Attribute::new("female"));
        assert_eq!(ex[2].label, 0);
    }

    #[test]
    fn examples_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"text\":\"She paid with cash.\"}\n\n{\"id\":\"b\",\"text\":\"He paid by card.\",\"label\":0,\"attribute\":\"male\"}\n",
        )
        .unwrap();
        let ex = read_corpus(
            &path,
            &AttributeLexicon::default_gender(),
            &CueLexicon::default_cash(),
        )
        .unwrap();
        let out = dir.path().join("out.jsonl");
        write_examples(&out, &ex).unwrap();
        assert_eq!(read_examples(&out).unwrap(), ex);
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(&path, "{\"id\":\"a\",\"text\":\"ok\"}\nnot json\n").unwrap();
        let err = read_corpus(
            &path,
            &AttributeLexicon::default_gender(),
            &CueLexicon::default_cash(),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }));
    }
}
