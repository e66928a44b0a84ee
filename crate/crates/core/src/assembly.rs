//! Condition-specific datasets and their provenance manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adjudication::{latest_records, AnnotationRecord, LabelFidelity};
use crate::corpus::{assign_splits, CorpusError, Example, Split, SplitAssignment};
use crate::generation::{read_generations, Candidate, GenerationError, GenerationParams, RawGeneration};
use crate::qc::{read_qc_log, GateId, QcError, QcLogRecord};

pub const MANIFEST_FORMAT: &str = "lgsa-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("synthetic example `{0}` has no QC log entry")]
    MissingQcLog(String),
    #[error("synthetic example `{0}` has no archived generation")]
    MissingArchive(String),
    #[error("synthetic example `{0}` did not pass QC")]
    NotAccepted(String),
    #[error("source `{0}` of a synthetic example is not a training original")]
    SourceNotInTrain(String),
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("baseline datasets take no synthetic examples")]
    BaselineWithCandidates,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Qc(#[from] QcError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Baseline,
    Swap,
    Lgsa,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Baseline, Condition::Swap, Condition::Lgsa];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Swap => "swap",
            Condition::Lgsa => "lgsa",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Condition::Baseline => "Baseline",
            Condition::Swap => "Gender-swap",
            Condition::Lgsa => "LGSA",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Condition::Baseline),
            "swap" => Ok(Condition::Swap),
            "lgsa" => Ok(Condition::Lgsa),
            other => Err(format!("unknown condition `{other}` (expected baseline, swap or lgsa)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationMode {
    /// Synthetic examples join the train split; the test split is untouched.
    #[default]
    TrainOnly,
    /// Originals and synthetic examples are merged, then split again.
    PreSplit,
}

impl AugmentationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationMode::TrainOnly => "train_only",
            AugmentationMode::PreSplit => "pre_split",
        }
    }
}

impl fmt::Display for AugmentationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train_only" | "train-only" => Ok(AugmentationMode::TrainOnly),
            "pre_split" | "pre-split" => Ok(AugmentationMode::PreSplit),
            other => Err(format!("unknown augmentation mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewResult {
    pub raters: usize,
    pub label_violations: usize,
    pub stereotype_flags: usize,
    pub mean_fluency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub generation: u64,
    pub split: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub synthetic_id: String,
    pub source_id: String,
    pub template_id: String,
    pub params: GenerationParams,
    pub backend_id: String,
    pub qc_scores: BTreeMap<GateId, f64>,
    /// QC log file holding this candidate's gate records.
    pub qc_log: String,
    /// Archive file holding the raw generation.
    pub archive: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<ReviewResult>,
    pub seeds: SeedSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    format: String,
    version: u32,
    condition: Condition,
    augmentation_mode: AugmentationMode,
    entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub condition: Condition,
    pub augmentation_mode: AugmentationMode,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub split: Split,
    #[serde(flatten)]
    pub example: Example,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledDataset {
    pub condition: Condition,
    pub augmentation_mode: AugmentationMode,
    pub rows: Vec<DatasetRow>,
    pub manifest: Manifest,
}

impl AssembledDataset {
    pub fn split_examples(&self, split: Split) -> Vec<&Example> {
        self.rows
            .iter()
            .filter(|r| r.split == split)
            .map(|r| &r.example)
            .collect()
    }

    /// SHA-256 over the serialized test rows, in dataset order.
    pub fn test_hash(&self) -> String {
        test_rows_hash(&self.rows)
    }
}

/// SHA-256 over the serialized test rows of `rows`, in order.
pub fn test_rows_hash(rows: &[DatasetRow]) -> String {
    let mut h = Sha256::new();
    for r in rows.iter().filter(|r| r.split == Split::Test) {
        h.update(serde_json::to_string(r).unwrap_or_default().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Provenance sources that manifest entries point into.
pub struct Provenance<'a> {
    pub qc_log: &'a [QcLogRecord],
    pub qc_log_ref: String,
    pub generations: &'a [RawGeneration],
    pub archive_ref: String,
    pub reviews: &'a [AnnotationRecord],
}

fn review_result(records: &[&AnnotationRecord]) -> Option<ReviewResult> {
    if records.is_empty() {
        return None;
    }
    Some(ReviewResult {
        raters: records.len(),
        label_violations: records
            .iter()
            .filter(|r| r.label_fidelity == LabelFidelity::Violated)
            .count(),
        stereotype_flags: records.iter().filter(|r| r.stereotype_flag).count(),
        mean_fluency: records.iter().map(|r| f64::from(r.fluency)).sum::<f64>()
            / records.len() as f64,
    })
}

/// Merge originals with accepted candidates. Baseline takes originals only.
pub fn assemble(
    originals: &[Example],
    split: &SplitAssignment,
    accepted: &[Candidate],
    provenance: &Provenance<'_>,
    condition: Condition,
    mode: AugmentationMode,
) -> Result<AssembledDataset, AssemblyError> {
    if condition == Condition::Baseline && !accepted.is_empty() {
        return Err(AssemblyError::BaselineWithCandidates);
    }
    let by_id: BTreeMap<&str, &Example> = originals.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut log_by_candidate: BTreeMap<&str, Vec<&QcLogRecord>> = BTreeMap::new();
    for r in provenance.qc_log {
        log_by_candidate.entry(r.candidate_id.as_str()).or_default().push(r);
    }
    let generations: BTreeMap<(&str, u64, &str), &RawGeneration> = provenance
        .generations
        .iter()
        .map(|g| ((g.source_id.as_str(), g.seed, g.backend_id.as_str()), g))
        .collect();
    let latest = latest_records(provenance.reviews);
    let mut reviews: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in &latest {
        reviews.entry(r.item_id.as_str()).or_default().push(r);
    }

    let mut seen: BTreeSet<String> = originals.iter().map(|e| e.id.clone()).collect();
    let mut synthetic = Vec::with_capacity(accepted.len());
    let mut entries = Vec::with_capacity(accepted.len());
    for c in accepted {
        let log = log_by_candidate
            .get(c.id.as_str())
            .ok_or_else(|| AssemblyError::MissingQcLog(c.id.clone()))?;
        if !log.iter().all(|r| r.pass) || !log.iter().any(|r| r.gate_id == GateId::Dedup) {
            return Err(AssemblyError::NotAccepted(c.id.clone()));
        }
        let raw = generations
            .get(&(
                c.source_id.as_str(),
                c.generation.seed,
                c.generation.backend_id.as_str(),
            ))
            .ok_or_else(|| AssemblyError::MissingArchive(c.id.clone()))?;
        let source = by_id
            .get(c.source_id.as_str())
            .ok_or_else(|| AssemblyError::MissingArchive(c.id.clone()))?;
        if mode == AugmentationMode::TrainOnly && split.get(&source.id) != Some(Split::Train) {
            return Err(AssemblyError::SourceNotInTrain(source.id.clone()));
        }
        if !seen.insert(c.id.clone()) {
            return Err(AssemblyError::DuplicateId(c.id.clone()));
        }
        synthetic.push(Example {
            id: c.id.clone(),
            text: c.text.clone(),
            attribute: c.target_attribute.clone(),
            label: source.label,
            origin: c.origin,
            attribute_provenance: None,
            label_provenance: None,
        });
        entries.push(ManifestEntry {
            synthetic_id: c.id.clone(),
            source_id: c.source_id.clone(),
            template_id: c.generation.template_id.clone(),
            params: raw.params.clone(),
            backend_id: c.generation.backend_id.clone(),
            qc_scores: log.iter().map(|r| (r.gate_id, r.score)).collect(),
            qc_log: provenance.qc_log_ref.clone(),
            archive: provenance.archive_ref.clone(),
            review: reviews.get(c.id.as_str()).and_then(|r| review_result(r)),
            seeds: SeedSet {
                generation: c.generation.seed,
                split: split.seed,
            },
        });
    }

    let rows = match mode {
        AugmentationMode::TrainOnly => {
            let mut rows = Vec::with_capacity(originals.len() + synthetic.len());
            for e in originals {
                let s = split
                    .get(&e.id)
                    .ok_or_else(|| AssemblyError::Manifest(format!("`{}` has no split", e.id)))?;
                rows.push(DatasetRow {
                    split: s,
                    example: e.clone(),
                });
            }
            rows.extend(synthetic.into_iter().map(|example| DatasetRow {
                split: Split::Train,
                example,
            }));
            rows
        }
        AugmentationMode::PreSplit => {
            let mut all: Vec<Example> = originals.to_vec();
            all.extend(synthetic);
            let resplit = assign_splits(&all, split.train_fraction, split.seed, split.stratified)?;
            all.into_iter()
                .map(|example| DatasetRow {
                    split: resplit.get(&example.id).unwrap_or(Split::Train),
                    example,
                })
                .collect()
        }
    };

    Ok(AssembledDataset {
        condition,
        augmentation_mode: mode,
        rows,
        manifest: Manifest {
            condition,
            augmentation_mode: mode,
            entries,
        },
    })
}

fn write_lines<T: Serialize>(w: &mut impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn parse_err(path: &Path, line: usize, reason: impl ToString) -> AssemblyError {
    AssemblyError::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.to_string(),
    }
}

pub fn write_dataset(path: &Path, dataset: &AssembledDataset) -> Result<(), AssemblyError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_lines(&mut w, &dataset.rows)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRow>, AssemblyError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?);
    }
    Ok(rows)
}

/// Header record, then one entry per line.
pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), AssemblyError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let header = ManifestHeader {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        condition: manifest.condition,
        augmentation_mode: manifest.augmentation_mode,
        entries: manifest.entries.len(),
    };
    write_lines(&mut w, &[header])?;
    write_lines(&mut w, &manifest.entries)?;
    w.flush()?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Manifest, AssemblyError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header: ManifestHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| parse_err(path, 1, e))?,
        None => return Err(parse_err(path, 1, "missing header record")),
    };
    if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
        return Err(parse_err(
            path,
            1,
            format!("unsupported manifest {} v{}", header.format, header.version),
        ));
    }
    let mut entries = Vec::with_capacity(header.entries);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?);
    }
    if entries.len() != header.entries {
        return Err(AssemblyError::Manifest(format!(
            "header declares {} entries, found {}",
            header.entries,
            entries.len()
        )));
    }
    Ok(Manifest {
        condition: header.condition,
        augmentation_mode: header.augmentation_mode,
        entries,
    })
}

/// Check that every entry's archive and QC log references resolve. Paths in
/// entries are relative to `base`.
pub fn validate_manifest(manifest: &Manifest, base: &Path) -> Result<(), AssemblyError> {
    let mut archives: BTreeMap<&str, BTreeSet<(String, u64, String)>> = BTreeMap::new();
    let mut logs: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for e in &manifest.entries {
        if !archives.contains_key(e.archive.as_str()) {
            let keys = read_generations(&base.join(&e.archive))?
                .into_iter()
                .map(|g| (g.source_id, g.seed, g.backend_id))
                .collect();
            archives.insert(&e.archive, keys);
        }
        if !logs.contains_key(e.qc_log.as_str()) {
            let ids = read_qc_log(&base.join(&e.qc_log))?
                .into_iter()
                .map(|r| r.candidate_id)
                .collect();
            logs.insert(&e.qc_log, ids);
        }
        let key = (e.source_id.clone(), e.seeds.generation, e.backend_id.clone());
        if !archives[e.archive.as_str()].contains(&key) {
            return Err(AssemblyError::MissingArchive(e.synthetic_id.clone()));
        }
        if !logs[e.qc_log.as_str()].contains(&e.synthetic_id) {
            return Err(AssemblyError::MissingQcLog(e.synthetic_id.clone()));
        }
    }
    Ok(())
}
