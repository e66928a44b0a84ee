use std::collections::BTreeMap;

use lgsa_core::adjudication::{
    calibrate, cohen_kappa, read_annotations, sample_for_review, sample_size, write_annotations, AnnotationRecord,
    Decision, LabelFidelity, ReviewItem,
};
use proptest::prelude::*;

/// Kappa from cell counts `[yy, yn, ny, nn]`.
fn oracle(c: [u32; 4]) -> Option<f64> {
    let n = f64::from(c.iter().sum::<u32>());
    let p_o = f64::from(c[0] + c[3]) / n;
    let a = f64::from(c[0] + c[1]) / n;
    let b = f64::from(c[0] + c[2]) / n;
    let p_e = a * b + (1.0 - a) * (1.0 - b);
    (p_e < 1.0 - 1e-12).then(|| (p_o - p_e) / (1.0 - p_e))
}

fn items(n: usize) -> Vec<ReviewItem> {
    (0..n)
        .map(|i| ReviewItem {
            candidate_id: format!("c{i:04}"),
            original_text: "he".into(),
            candidate_text: "she".into(),
            target_attribute: "female".into(),
            partition_id: format!("p{}", i % 3),
        })
        .collect()
}

proptest! {
    #[test]
    fn kappa_matches_the_table_formula(cells in prop::array::uniform4(0u32..20)) {
        prop_assume!(cells.iter().sum::<u32>() > 0);
        let mut pairs = Vec::new();
        for (count, pair) in cells.iter().zip([(true, true), (true, false), (false, true), (false, false)]) {
            pairs.extend(std::iter::repeat_n(pair, *count as usize));
        }
        match (cohen_kappa(&pairs), oracle(cells)) {
            (Some(k), Some(o)) => prop_assert!((k - o).abs() < 1e-9),
            (None, None) => {}
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn sample_is_ceil_of_rate_without_replacement(n in 1usize..500, pct in 1u32..=100, seed in any::<u64>()) {
        let rate = f64::from(pct) / 100.0;
        let want = (u64::from(pct) * n as u64).div_ceil(100) as usize;
        prop_assert_eq!(sample_size(n, rate), want.max(1));
        let picked = sample_for_review(&items(n), rate, seed).unwrap();
        prop_assert_eq!(picked.len(), want.max(1));
        prop_assert!(picked.windows(2).all(|w| w[0].candidate_id < w[1].candidate_id));
        prop_assert_eq!(picked, sample_for_review(&items(n), rate, seed).unwrap());
    }
}

#[test]
fn calibration_lists_flagged_partitions_only() {
    let partitions: BTreeMap<String, String> =
        items(10).into_iter().map(|i| (i.candidate_id, i.partition_id)).collect();
    let rec = |i: usize, violated: bool, flag: bool| AnnotationRecord {
        item_id: format!("c{i:04}"),
        rater_id: "r".into(),
        label_fidelity: if violated { LabelFidelity::Violated } else { LabelFidelity::Preserved },
        fluency: 3,
        stereotype_flag: flag,
        timestamp: i as u64,
    };
    let records: Vec<AnnotationRecord> = (0..10).map(|i| rec(i, i == 1, i == 5)).collect();
    let d = calibrate(&records, 0.1, &partitions).unwrap();
    assert_eq!(d.decision, Decision::Regenerate);
    assert_eq!(d.error_rate, 0.2);
    assert_eq!(d.affected_partitions, ["p1", "p2"]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.jsonl");
    write_annotations(&path, &records).unwrap();
    assert_eq!(read_annotations(&path).unwrap(), records);
    assert!(calibrate(&[], 0.1, &partitions).is_err());
}
