//! Group accuracy, bias gap and the statistics used to compare conditions.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use thiserror::Error;

use crate::corpus::{Attribute, Example};
use crate::model::TextClassifier;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("accuracy {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("{predictions} predictions for {examples} examples")]
    LengthMismatch { predictions: usize, examples: usize },
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("confidence level {0} outside (0, 1)")]
    BadLevel(f64),
    #[error("sign test needs at least 5 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("every pair is tied")]
    AllTies,
}

/// Decimal grid that gaps are reported on. Removes binary noise such as
/// `0.963 - 0.956 = 0.007000000000000006`.
const GAP_GRID: f64 = 1e12;

/// `|a - b|`, rounded to 12 decimal places.
pub fn bias_gap(a: f64, b: f64) -> Result<f64, EvalError> {
    for v in [a, b] {
        if !(0.0..=1.0).contains(&v) {
            return Err(EvalError::OutOfRange(v));
        }
    }
    Ok(((a - b).abs() * GAP_GRID).round() / GAP_GRID)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    /// `correct / total`; a single division, so exact counts map to the
    /// nearest double.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub overall: Tally,
    /// Only groups present in the test set.
    pub groups: BTreeMap<Attribute, Tally>,
    /// `|acc_a - acc_b|` when exactly two groups are present, otherwise the
    /// spread between the best and worst group; absent with fewer than two.
    pub bias_gap: Option<f64>,
}

impl GroupMetrics {
    pub fn accuracy(&self, group: &str) -> Option<f64> {
        self.groups.get(&Attribute::new(group)).map(Tally::accuracy)
    }
}

/// Count-based metrics. `unknown`-attribute examples count toward overall
/// accuracy only.
pub fn evaluate_predictions(examples: &[&Example], predictions: &[u8]) -> Result<GroupMetrics, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if examples.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            examples: examples.len(),
        });
    }
    let mut overall = Tally { correct: 0, total: 0 };
    let mut groups: BTreeMap<Attribute, Tally> = BTreeMap::new();
    for (e, &p) in examples.iter().zip(predictions) {
        let hit = usize::from(e.label == p);
        overall.correct += hit;
        overall.total += 1;
        if !e.attribute.is_unknown() {
            let g = groups.entry(e.attribute.clone()).or_insert(Tally { correct: 0, total: 0 });
            g.correct += hit;
            g.total += 1;
        }
    }
    let accs: Vec<f64> = groups.values().map(Tally::accuracy).collect();
    let bias_gap = if accs.len() >= 2 {
        let max = accs.iter().copied().fold(f64::MIN, f64::max);
        let min = accs.iter().copied().fold(f64::MAX, f64::min);
        Some(bias_gap(max, min)?)
    } else {
        None
    };
    Ok(GroupMetrics {
        overall,
        groups,
        bias_gap,
    })
}

/// Predict every example and score the predictions. Also returns per-example
/// correctness for resampling.
pub fn evaluate(model: &TextClassifier, test: &[&Example]) -> Result<(GroupMetrics, Vec<bool>), EvalError> {
    let predictions: Vec<u8> = test.iter().map(|e| model.predict(&e.text)).collect();
    let metrics = evaluate_predictions(test, &predictions)?;
    let correct = test.iter().zip(&predictions).map(|(e, &p)| e.label == p).collect();
    Ok((metrics, correct))
}

/// Percentile bootstrap interval for the mean of `correct`.
pub fn bootstrap_ci(correct: &[bool], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64), EvalError> {
    if correct.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if resamples < 100 {
        return Err(EvalError::TooFewResamples(resamples));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::BadLevel(level));
    }
    let n = correct.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let hits = (0..n).filter(|_| correct[rng.gen_range(0..n)]).count();
            hits as f64 / n as f64
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lo = ((alpha * resamples as f64).floor() as usize).min(resamples - 1);
    let hi = (((1.0 - alpha) * resamples as f64).ceil() as usize)
        .saturating_sub(1)
        .min(resamples - 1);
    Ok((stats[lo], stats[hi]))
}

/// Exact two-sided sign test on `after - before` differences. Ties are
/// dropped after the size check.
pub fn paired_sign_test(pairs: &[(f64, f64)]) -> Result<f64, EvalError> {
    if pairs.len() < 5 {
        return Err(EvalError::TooFewPairs(pairs.len()));
    }
    let pos = pairs.iter().filter(|(a, b)| b > a).count();
    let neg = pairs.iter().filter(|(a, b)| b < a).count();
    let n = pos + neg;
    if n == 0 {
        return Err(EvalError::AllTies);
    }
    let k = pos.min(neg) as u64;
    let binom = Binomial::new(0.5, n as u64).map_err(|_| EvalError::AllTies)?;
    Ok((2.0 * binom.cdf(k)).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub sd: f64,
}

/// `None` for an empty slice.
pub fn mean_sd(values: &[f64]) -> Option<MeanSd> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanSd { mean, sd })
}
