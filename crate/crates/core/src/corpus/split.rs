use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Example};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Fixed train/test partition of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    pub train_fraction: f64,
    pub seed: u64,
    /// Stratification was requested.
    pub stratified: bool,
    /// Stratification was requested but a label had fewer than two examples,
    /// so the split fell back to unstratified.
    pub fallback_warning: bool,
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<Split> {
        self.assignment.get(id).copied()
    }

    pub fn train_len(&self) -> usize {
        self.assignment.values().filter(|s| **s == Split::Train).count()
    }

    /// Partition `examples` into (train, test), preserving input order.
    /// Examples without an assignment are skipped.
    pub fn partition<'a>(&self, examples: &'a [Example]) -> (Vec<&'a Example>, Vec<&'a Example>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for ex in examples {
            match self.get(&ex.id) {
                Some(Split::Train) => train.push(ex),
                Some(Split::Test) => test.push(ex),
                None => {}
            }
        }
        (train, test)
    }
}

fn rounded_share(count: usize, fraction: f64) -> usize {
    ((count as f64 * fraction + 0.5).floor() as usize).min(count)
}

/// Seeded train/test split. Under stratification each label stratum gets
/// `floor(count * fraction + 0.5)` train examples and any residual against
/// the overall target is absorbed by the largest stratum.
pub fn assign_splits(
    corpus: &[Example],
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitAssignment, CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::BadFraction(train_fraction));
    }
    if corpus.len() < 2 {
        return Err(CorpusError::TooSmall(corpus.len()));
    }
    let mut seen = BTreeSet::new();
    for ex in corpus {
        if !seen.insert(ex.id.as_str()) {
            return Err(CorpusError::DuplicateId(ex.id.clone()));
        }
    }

    let mut by_label: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    for ex in corpus {
        by_label.entry(ex.label).or_default().push(ex.id.as_str());
    }
    let can_stratify = by_label.values().all(|ids| ids.len() >= 2);
    let use_strata = stratified && can_stratify;

    let mut strata: Vec<Vec<&str>> = if use_strata {
        by_label.into_values().collect()
    } else {
        vec![corpus.iter().map(|e| e.id.as_str()).collect()]
    };
    // input order must not matter
    for s in &mut strata {
        s.sort_unstable();
    }

    let mut quotas: Vec<usize> = strata
        .iter()
        .map(|s| rounded_share(s.len(), train_fraction))
        .collect();
    let target = rounded_share(corpus.len(), train_fraction);
    let assigned: usize = quotas.iter().sum();
    if assigned != target {
        let largest = (0..strata.len())
            .max_by(|&a, &b| strata[a].len().cmp(&strata[b].len()).then(b.cmp(&a)))
            .expect("at least one stratum");
        let q = quotas[largest] as i64 + target as i64 - assigned as i64;
        quotas[largest] = q.clamp(0, strata[largest].len() as i64) as usize;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    for (ids, quota) in strata.iter_mut().zip(quotas) {
        ids.shuffle(&mut rng);
        for (i, id) in ids.iter().enumerate() {
            let split = if i < quota { Split::Train } else { Split::Test };
            assignment.insert((*id).to_string(), split);
        }
    }

    Ok(SplitAssignment {
        assignment,
        train_fraction,
        seed,
        stratified,
        fallback_warning: stratified && !can_stratify,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Attribute, Origin};
    use proptest::prelude::*;

    fn corpus(labels: &[u8]) -> Vec<Example> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Example {
                id: format!("ex-{i:03}"),
                text: format!("sentence {i}"),
                attribute: Attribute::new("male"),
                label,
                origin: Origin::Swap,
                attribute_provenance: None,
                label_provenance: None,
            })
            .collect()
    }

    fn train_labels(c: &[Example], s: &SplitAssignment) -> (usize, usize) {
        let (train, _) = s.partition(c);
        let pos = train.iter().filter(|e| e.label == 1).count();
        (pos, train.len() - pos)
    }

    #[test]
    fn stratified_ten_example_split() {
        // oracle: floor(7*0.7+0.5) = 5, floor(3*0.7+0.5) = 2, floor(10*0.7+0.5) = 7
        let oracle = |n: usize| ((n as f64) * 0.7 + 0.5).floor() as usize;
        assert_eq!((oracle(7), oracle(3), oracle(10)), (5, 2, 7));

        let c = corpus(&[1, 1, 1, 1, 1, 1, 1, 0, 0, 0]);
        let s = assign_splits(&c, 0.7, 11, true).unwrap();
        assert_eq!(train_labels(&c, &s), (5, 2));
        assert_eq!(s.train_len(), 7);
        assert!(!s.fallback_warning);
    }

    #[test]
    fn split_is_deterministic() {
        let c = corpus(&[1, 0, 1, 0, 1, 1, 0, 1, 0, 0, 1, 1]);
        let a = assign_splits(&c, 0.7, 5, true).unwrap();
        let b = assign_splits(&c, 0.7, 5, true).unwrap();
        assert_eq!(a, b);
        let mut reversed = c.clone();
        reversed.reverse();
        assert_eq!(assign_splits(&reversed, 0.7, 5, true).unwrap(), a);
    }

    #[test]
    fn hundred_examples_seventy_train() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 3 == 0) as u8).collect();
        let c = corpus(&labels);
        for strat in [true, false] {
            assert_eq!(assign_splits(&c, 0.7, 1, strat).unwrap().train_len(), 70);
        }
    }

    #[test]
    fn residual_goes_to_largest_stratum() {
        // 5 + 5 at 0.5: per-stratum floor(2.5+0.5)=3 each = 6, target floor(5.5)=5
        let c = corpus(&[1, 1, 1, 1, 1, 0, 0, 0, 0, 0]);
        let s = assign_splits(&c, 0.5, 3, true).unwrap();
        assert_eq!(s.train_len(), 5);
    }

    #[test]
    fn falls_back_when_a_label_is_rare() {
        let c = corpus(&[1, 1, 1, 1, 0]);
        let s = assign_splits(&c, 0.6, 3, true).unwrap();
        assert!(s.fallback_warning);
        assert_eq!(s.train_len(), 3);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            assign_splits(&corpus(&[1]), 0.7, 0, true),
            Err(CorpusError::TooSmall(1))
        ));
        assert!(assign_splits(&corpus(&[1, 0]), 1.0, 0, true).is_err());
        assert!(assign_splits(&corpus(&[1, 0]), 0.0, 0, true).is_err());
        let mut dup = corpus(&[1, 0, 1]);
        dup[2].id = dup[0].id.clone();
        assert!(matches!(
            assign_splits(&dup, 0.5, 0, false),
            Err(CorpusError::DuplicateId(_))
        ));
    }

    proptest! {
        #[test]
        fn split_partitions_and_respects_fractions(
            labels in prop::collection::vec(0u8..2, 2..120),
            fraction in 0.05f64..0.95,
            seed in any::<u64>(),
            stratified in any::<bool>(),
        ) {
            let c = corpus(&labels);
            let s = assign_splits(&c, fraction, seed, stratified).unwrap();
            prop_assert_eq!(s.assignment.len(), c.len());
            let (train, test) = s.partition(&c);
            prop_assert_eq!(train.len() + test.len(), c.len());
            let n = c.len() as f64;
            prop_assert!((train.len() as f64 / n - fraction).abs() <= 1.0 / n + 1e-12);
            if stratified && !s.fallback_warning {
                for label in [0u8, 1] {
                    let count = c.iter().filter(|e| e.label == label).count();
                    if count == 0 { continue; }
                    let in_train = train.iter().filter(|e| e.label == label).count();
                    let realized = in_train as f64 / count as f64;
                    prop_assert!((realized - fraction).abs() <= 1.0 / count as f64 + 1e-12,
                        "label {} realized {} vs {}", label, realized, fraction);
                }
            }
        }
    }
}
