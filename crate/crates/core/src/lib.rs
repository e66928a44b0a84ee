//! Counterfactual augmentation for subgroup fairness in text classifiers.
//!
//! The pipeline canonicalizes a corpus, generates attribute-swapped
//! paraphrases through interchangeable backends, gates them with automated
//! quality checks and human spot-checks, assembles condition-specific
//! datasets with provenance manifests, and measures the fairness effect with
//! a TF-IDF + logistic-regression classifier.

pub mod adjudication;
pub mod assembly;
pub mod corpus;
pub mod fairness_eval;
pub mod generation;
pub mod model;
pub mod pipeline;
pub mod qc;
pub mod synthcorpus;
pub mod text;
