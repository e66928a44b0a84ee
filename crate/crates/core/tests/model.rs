use lgsa_core::model::{fit_featurizer, loss_and_gradient, train_with_history, FeatureVector, TrainConfig};
use lgsa_core::synthcorpus::{generate_corpus, TemplateSet};
use proptest::prelude::*;

#[test]
fn loss_never_increases_on_the_default_corpus() {
    let corpus = generate_corpus(&TemplateSet::default_set(), 1000, 0.8, 0.5, 0).unwrap();
    let texts: Vec<&str> = corpus.iter().map(|e| e.text.as_str()).collect();
    let labels: Vec<u8> = corpus.iter().map(|e| e.label).collect();
    let vocab = fit_featurizer(&texts).unwrap();
    let features: Vec<FeatureVector> = texts.iter().map(|t| vocab.transform(t)).collect();
    let (_, history) = train_with_history(&features, &labels, vocab.len(), TrainConfig::default()).unwrap();
    assert_eq!(history.len(), 300);
    for (i, w) in history.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 1e-12, "epoch {}: {} -> {}", i + 1, w[0], w[1]);
    }
    assert!(history[299] < history[0] * 0.9, "{} -> {}", history[0], history[299]);
}

#[test]
fn tf_idf_rows_are_unit_length() {
    let corpus = generate_corpus(&TemplateSet::default_set(), 200, 0.8, 0.5, 4).unwrap();
    let texts: Vec<&str> = corpus.iter().map(|e| e.text.as_str()).collect();
    let vocab = fit_featurizer(&texts).unwrap();
    for t in &texts {
        let x = vocab.transform(t);
        assert!((x.norm() - 1.0).abs() < 1e-12);
        assert!(x.entries.windows(2).all(|w| w[0].0 < w[1].0));
    }
    assert!(vocab.transform("zzz qqq").is_zero());
}

proptest! {
    /// With no penalty the bias gradient is the mean residual, so it is
    /// bounded by 1 in magnitude.
    #[test]
    fn bias_gradient_is_a_mean_residual(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..20),
        labels_seed in any::<u64>(),
        w in prop::collection::vec(-2.0f64..2.0, 3),
        b in -2.0f64..2.0,
    ) {
        let features: Vec<FeatureVector> = rows
            .iter()
            .map(|r| FeatureVector { entries: r.iter().copied().enumerate().collect() })
            .collect();
        let labels: Vec<u8> = (0..features.len()).map(|i| ((labels_seed >> (i % 64)) & 1) as u8).collect();
        let (loss, _, gb) = loss_and_gradient(&w, b, &features, &labels, 0.0).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(gb.abs() <= 1.0);
    }

    #[test]
    fn penalty_adds_l2_times_weights(
        w in prop::collection::vec(-2.0f64..2.0, 4),
        l2 in 0.0f64..1.0,
    ) {
        let features = vec![FeatureVector { entries: vec![(0, 1.0), (3, -0.5)] }, FeatureVector::default()];
        let labels = vec![1, 0];
        let (l0, g0, _) = loss_and_gradient(&w, 0.1, &features, &labels, 0.0).unwrap();
        let (l1, g1, _) = loss_and_gradient(&w, 0.1, &features, &labels, l2).unwrap();
        let sq: f64 = w.iter().map(|x| x * x).sum();
        prop_assert!((l1 - l0 - 0.5 * l2 * sq).abs() < 1e-12);
        for i in 0..4 {
            prop_assert!((g1[i] - g0[i] - l2 * w[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn default_training_config() {
    let c = TrainConfig::default();
    assert_eq!((c.learning_rate, c.epochs, c.l2), (0.5, 300, 1e-4));
}
