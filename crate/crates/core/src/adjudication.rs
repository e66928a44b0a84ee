//! Human spot-checks: sampling, agreement statistics and calibration.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdjudicationError {
    #[error("nothing to sample from")]
    EmptyAccepted,
    #[error("sampling rate {0} outside (0, 1]")]
    BadRate(f64),
    #[error("tolerance {0} outside [0, 1)")]
    BadTolerance(f64),
    #[error("agreement needs at least two raters sharing an item")]
    NotEnoughRaters,
    #[error("no annotation records")]
    NoRecords,
    #[error("invalid rating: {0}")]
    InvalidRating(String),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub candidate_id: String,
    pub original_text: String,
    pub candidate_text: String,
    pub target_attribute: String,
    pub partition_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelFidelity {
    Preserved,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub rater_id: String,
    pub label_fidelity: LabelFidelity,
    pub fluency: u8,
    pub stereotype_flag: bool,
    pub timestamp: u64,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<(), AdjudicationError> {
        if !(1..=5).contains(&self.fluency) {
            return Err(AdjudicationError::InvalidRating(format!(
                "fluency {} outside 1..=5",
                self.fluency
            )));
        }
        if self.item_id.is_empty() || self.rater_id.is_empty() {
            return Err(AdjudicationError::InvalidRating("empty item or rater id".into()));
        }
        Ok(())
    }

    /// Counts toward the sampled error rate.
    pub fn is_flagged(&self) -> bool {
        self.label_fidelity == LabelFidelity::Violated || self.stereotype_flag
    }
}

/// Uniform sample of `ceil(rate * N)` items without replacement.
pub fn sample_for_review(
    accepted: &[ReviewItem],
    rate: f64,
    seed: u64,
) -> Result<Vec<ReviewItem>, AdjudicationError> {
    if accepted.is_empty() {
        return Err(AdjudicationError::EmptyAccepted);
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(AdjudicationError::BadRate(rate));
    }
    let k = sample_size(accepted.len(), rate);
    let mut pool: Vec<&ReviewItem> = accepted.iter().collect();
    pool.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<ReviewItem> = pool
        .choose_multiple(&mut rng, k)
        .map(|i| (*i).clone())
        .collect();
    picked.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
    Ok(picked)
}

/// `ceil(rate * n)`, ignoring float noise below 1e-9 (0.05 * 200 is
/// 10.000000000000002 in binary).
pub fn sample_size(n: usize, rate: f64) -> usize {
    let exact = rate * n as f64;
    let k = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    };
    (k as usize).clamp(1, n)
}

/// Latest record per `(item, rater)`; equal timestamps keep the later one.
pub fn latest_records(records: &[AnnotationRecord]) -> Vec<AnnotationRecord> {
    let mut latest: BTreeMap<(&str, &str), &AnnotationRecord> = BTreeMap::new();
    for r in records {
        let key = (r.item_id.as_str(), r.rater_id.as_str());
        match latest.get(&key) {
            Some(prev) if prev.timestamp > r.timestamp => {}
            _ => {
                latest.insert(key, r);
            }
        }
    }
    latest.into_values().cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionAgreement {
    pub percent: f64,
    /// Absent when chance agreement is 1 for every rater pair or the
    /// question is not binary.
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub label_fidelity: QuestionAgreement,
    pub stereotype_flag: QuestionAgreement,
    pub fluency: QuestionAgreement,
    pub n_items: usize,
    pub n_raters: usize,
}

/// Cohen's kappa for two raters' paired binary answers. `None` when
/// `p_e = 1`.
pub fn cohen_kappa(pairs: &[(bool, bool)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let agree = pairs.iter().filter(|(a, b)| a == b).count() as f64;
    let a_yes = pairs.iter().filter(|(a, _)| *a).count() as f64 / n;
    let b_yes = pairs.iter().filter(|(_, b)| *b).count() as f64 / n;
    let p_o = agree / n;
    let p_e = a_yes * b_yes + (1.0 - a_yes) * (1.0 - b_yes);
    if (1.0 - p_e).abs() < 1e-12 {
        return None;
    }
    Some((p_o - p_e) / (1.0 - p_e))
}

fn question<T: PartialEq + Copy>(
    pair_answers: &[Vec<(T, T)>],
    as_bool: Option<fn(T) -> bool>,
) -> QuestionAgreement {
    let total: usize = pair_answers.iter().map(Vec::len).sum();
    let agree: usize = pair_answers
        .iter()
        .flat_map(|p| p.iter())
        .filter(|(a, b)| a == b)
        .count();
    let kappa = as_bool.and_then(|f| {
        let ks: Vec<f64> = pair_answers
            .iter()
            .filter_map(|p| cohen_kappa(&p.iter().map(|&(a, b)| (f(a), f(b))).collect::<Vec<_>>()))
            .collect();
        (!ks.is_empty()).then(|| ks.iter().sum::<f64>() / ks.len() as f64)
    });
    QuestionAgreement {
        percent: agree as f64 / total as f64,
        kappa,
    }
}

/// Pairwise agreement over the latest record per `(item, rater)`, averaged
/// over rater pairs that share at least one item.
pub fn compute_agreement(records: &[AnnotationRecord]) -> Result<AgreementStats, AdjudicationError> {
    let latest = latest_records(records);
    let mut by_rater: BTreeMap<&str, BTreeMap<&str, &AnnotationRecord>> = BTreeMap::new();
    for r in &latest {
        by_rater
            .entry(r.rater_id.as_str())
            .or_default()
            .insert(r.item_id.as_str(), r);
    }
    let raters: Vec<&str> = by_rater.keys().copied().collect();
    let mut shared: Vec<Vec<(&AnnotationRecord, &AnnotationRecord)>> = Vec::new();
    for (i, a) in raters.iter().enumerate() {
        for b in &raters[i + 1..] {
            let pairs: Vec<_> = by_rater[a]
                .iter()
                .filter_map(|(item, ra)| by_rater[b].get(item).map(|rb| (*ra, *rb)))
                .collect();
            if !pairs.is_empty() {
                shared.push(pairs);
            }
        }
    }
    if shared.is_empty() {
        return Err(AdjudicationError::NotEnoughRaters);
    }
    let project = |f: fn(&AnnotationRecord) -> u8| -> Vec<Vec<(u8, u8)>> {
        shared
            .iter()
            .map(|p| p.iter().map(|(a, b)| (f(a), f(b))).collect())
            .collect()
    };
    let items: BTreeSet<&str> = latest.iter().map(|r| r.item_id.as_str()).collect();
    Ok(AgreementStats {
        label_fidelity: question(
            &project(|r| u8::from(r.label_fidelity == LabelFidelity::Preserved)),
            Some(|v| v == 1),
        ),
        stereotype_flag: question(&project(|r| u8::from(r.stereotype_flag)), Some(|v| v == 1)),
        fluency: question(&project(|r| r.fluency), None),
        n_items: items.len(),
        n_raters: raters.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Pass,
    Regenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDecision {
    pub error_rate: f64,
    pub tolerance: f64,
    pub decision: Decision,
    pub affected_partitions: Vec<String>,
    pub flagged_items: usize,
    pub sampled_items: usize,
}

pub const DEFAULT_TOLERANCE: f64 = 0.10;

/// Error rate = items flagged by any rater / items rated. Regenerate iff the
/// rate strictly exceeds `tolerance`. `partitions` maps item id to partition.
pub fn calibrate(
    records: &[AnnotationRecord],
    tolerance: f64,
    partitions: &BTreeMap<String, String>,
) -> Result<CalibrationDecision, AdjudicationError> {
    if !(0.0..1.0).contains(&tolerance) {
        return Err(AdjudicationError::BadTolerance(tolerance));
    }
    let latest = latest_records(records);
    if latest.is_empty() {
        return Err(AdjudicationError::NoRecords);
    }
    let mut flagged: BTreeMap<&str, bool> = BTreeMap::new();
    for r in &latest {
        *flagged.entry(r.item_id.as_str()).or_insert(false) |= r.is_flagged();
    }
    let flagged_items: Vec<&str> = flagged.iter().filter(|(_, f)| **f).map(|(i, _)| *i).collect();
    let error_rate = flagged_items.len() as f64 / flagged.len() as f64;
    let affected: BTreeSet<String> = flagged_items
        .iter()
        .filter_map(|i| partitions.get(*i).cloned())
        .collect();
    Ok(CalibrationDecision {
        error_rate,
        tolerance,
        decision: if error_rate > tolerance {
            Decision::Regenerate
        } else {
            Decision::Pass
        },
        affected_partitions: affected.into_iter().collect(),
        flagged_items: flagged_items.len(),
        sampled_items: flagged.len(),
    })
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, AdjudicationError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AdjudicationError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), AdjudicationError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, AdjudicationError> {
    let records: Vec<AnnotationRecord> = read_jsonl(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<(), AdjudicationError> {
    write_jsonl(path, records)
}

pub fn read_review_items(path: &Path) -> Result<Vec<ReviewItem>, AdjudicationError> {
    read_jsonl(path)
}

pub fn write_review_items(path: &Path, items: &[ReviewItem]) -> Result<(), AdjudicationError> {
    write_jsonl(path, items)
}
