use lgsa_core::corpus::{extract_label, infer_attribute, AttributeLexicon, CueLexicon};
use lgsa_core::synthcorpus::{generate_corpus, TemplateSet};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn counts_are_exact_and_metadata_agrees_with_text(
        n in 4usize..400,
        male in 0.0f64..=1.0,
        positive in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let set = TemplateSet::default_set();
        let corpus = generate_corpus(&set, n, male, positive, seed).unwrap();
        prop_assert_eq!(corpus.len(), n);
        let n_male = corpus.iter().filter(|e| e.attribute.as_str() == "male").count();
        let n_pos = corpus.iter().filter(|e| e.label == 1).count();
        prop_assert_eq!(n_male, (n as f64 * male).round() as usize);
        prop_assert_eq!(n_pos, (n as f64 * positive).round() as usize);

        let lexicon = AttributeLexicon::default_gender();
        let cues = CueLexicon::default_cash();
        for e in &corpus {
            let guess = infer_attribute(&e.text, &lexicon);
            prop_assert_eq!(&guess.attribute, &e.attribute);
            prop_assert_eq!(guess.confidence, 1.0);
            prop_assert_eq!(extract_label(&e.text, &cues), e.label);
            prop_assert!(e.validate().is_ok());
        }
        let mut ids: Vec<&str> = corpus.iter().map(|e| e.id.as_str()).collect();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }
}

#[test]
fn same_seed_same_corpus() {
    let set = TemplateSet::default_set();
    let a = generate_corpus(&set, 500, 0.8, 0.5, 17).unwrap();
    assert_eq!(a, generate_corpus(&set, 500, 0.8, 0.5, 17).unwrap());
    assert_ne!(a, generate_corpus(&set, 500, 0.8, 0.5, 18).unwrap());
    assert_eq!(a[0].id, "syn-00000");
}

#[test]
fn shipped_templates_load_from_a_directory() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synth");
    let loaded = TemplateSet::load_dir(&dir, &CueLexicon::default_cash()).unwrap();
    assert_eq!(loaded, TemplateSet::default_set());
}
