//! TF-IDF featurizer and full-batch logistic regression.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

const FORMAT_HEADER: &str = "lgsa-model v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot fit on an empty corpus")]
    EmptyCorpus,
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("label {0} is not binary")]
    NonBinaryLabel(u8),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("loss became non-finite at epoch {0}; lower the learning rate")]
    Diverged(usize),
    #[error("feature index {index} outside model dimension {dim}")]
    DimensionMismatch { index: usize, dim: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("model file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sparse row: strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    pub entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, dense: &[f64]) -> Result<f64, ModelError> {
        let mut acc = 0.0;
        for &(i, w) in &self.entries {
            let d = dense.get(i).ok_or(ModelError::DimensionMismatch {
                index: i,
                dim: dense.len(),
            })?;
            acc += w * d;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index: BTreeMap<String, usize>,
    df: Vec<usize>,
    idf: Vec<f64>,
    n_docs: usize,
}

pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, df: Vec<usize>, n_docs: usize) -> Self {
        let idf = df.iter().map(|&d| smoothed_idf(n_docs, d)).collect();
        let index = tokens.into_iter().enumerate().map(|(i, t)| (t, i)).collect();
        Vocabulary {
            index,
            df,
            idf,
            n_docs,
        }
    }

    pub fn len(&self) -> usize {
        self.df.len()
    }

    pub fn is_empty(&self) -> bool {
        self.df.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.index_of(token).map(|i| self.idf[i])
    }

    pub fn df(&self, token: &str) -> Option<usize> {
        self.index_of(token).map(|i| self.df[i])
    }

    /// Tokens in column order (lexicographic).
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    /// `tf * idf`, L2-normalized. Out-of-vocabulary tokens are dropped; an
    /// all-OOV text yields the zero vector.
    pub fn transform(&self, input: &str) -> FeatureVector {
        let tokens = text::tokenize(input);
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for t in &tokens {
            if let Some(i) = self.index_of(t) {
                *tf.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> =
            tf.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for e in &mut entries {
                e.1 /= norm;
            }
        }
        FeatureVector { entries }
    }
}

/// Vocabulary over all tokens of `texts`, columns in lexicographic order.
pub fn fit_featurizer<S: AsRef<str>>(texts: &[S]) -> Result<Vocabulary, ModelError> {
    if texts.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for t in texts {
        let mut seen = text::tokenize(t.as_ref());
        seen.sort_unstable();
        seen.dedup();
        for tok in seen {
            *df.entry(tok).or_insert(0) += 1;
        }
    }
    let (tokens, counts): (Vec<String>, Vec<usize>) = df.into_iter().unzip();
    Ok(Vocabulary::from_parts(tokens, counts, texts.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Recorded for provenance; training itself has no randomness.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 300,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: TrainConfig,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic loss plus `(l2 / 2) * ||w||^2`, with its gradient in
/// `weights` and `bias`. The bias is not penalized.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    features: &[FeatureVector],
    labels: &[u8],
    l2: f64,
) -> Result<(f64, Vec<f64>, f64), ModelError> {
    let n = features.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let z = x.dot(weights)? + bias;
        loss += if y == 1 { softplus(-z) } else { softplus(z) };
        let r = sigmoid(z) - f64::from(y);
        for &(i, w) in &x.entries {
            grad[i] += r * w;
        }
        grad_b += r;
    }
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    for (g, w) in grad.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    Ok((loss / n + 0.5 * l2 * sq, grad, grad_b / n))
}

fn check_training_input(features: &[FeatureVector], labels: &[u8]) -> Result<(), ModelError> {
    if features.len() != labels.len() {
        return Err(ModelError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    if features.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(ModelError::NonBinaryLabel(l));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(ModelError::SingleClass);
    }
    Ok(())
}

/// Full-batch gradient descent from zero weights. Returns the model and the
/// objective value before each epoch's update.
pub fn train_with_history(
    features: &[FeatureVector],
    labels: &[u8],
    dim: usize,
    config: TrainConfig,
) -> Result<(LinearClassifier, Vec<f64>), ModelError> {
    check_training_input(features, labels)?;
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) || config.l2 < 0.0 {
        return Err(ModelError::InvalidConfig(format!(
            "learning rate {} and l2 {}",
            config.learning_rate, config.l2
        )));
    }
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grad, grad_b) = loss_and_gradient(&weights, bias, features, labels, config.l2)?;
        if !loss.is_finite() {
            return Err(ModelError::Diverged(epoch));
        }
        history.push(loss);
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
        bias -= config.learning_rate * grad_b;
    }
    if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(ModelError::Diverged(config.epochs));
    }
    Ok((
        LinearClassifier {
            weights,
            bias,
            config,
        },
        history,
    ))
}

pub fn train(
    features: &[FeatureVector],
    labels: &[u8],
    dim: usize,
    config: TrainConfig,
) -> Result<LinearClassifier, ModelError> {
    train_with_history(features, labels, dim, config).map(|(m, _)| m)
}

impl LinearClassifier {
    pub fn predict_proba(&self, x: &FeatureVector) -> Result<f64, ModelError> {
        Ok(sigmoid(x.dot(&self.weights)? + self.bias))
    }

    /// 1 iff probability ≥ 0.5.
    pub fn predict(&self, x: &FeatureVector) -> Result<u8, ModelError> {
        Ok(u8::from(self.predict_proba(x)? >= 0.5))
    }
}

/// Featurizer and classifier bundled with the names of the two classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TextClassifier {
    pub vocabulary: Vocabulary,
    pub model: LinearClassifier,
    /// `classes[1]` is the positive class.
    pub classes: [String; 2],
}

impl TextClassifier {
    pub fn fit<S: AsRef<str>>(
        texts: &[S],
        labels: &[u8],
        classes: [String; 2],
        config: TrainConfig,
    ) -> Result<Self, ModelError> {
        let vocabulary = fit_featurizer(texts)?;
        let features: Vec<FeatureVector> =
            texts.iter().map(|t| vocabulary.transform(t.as_ref())).collect();
        let model = train(&features, labels, vocabulary.len(), config)?;
        Ok(TextClassifier {
            vocabulary,
            model,
            classes,
        })
    }

    /// Probability of the positive class.
    pub fn proba(&self, input: &str) -> f64 {
        // transform only yields in-vocabulary indices
        self.model
            .predict_proba(&self.vocabulary.transform(input))
            .unwrap_or(0.5)
    }

    pub fn predict(&self, input: &str) -> u8 {
        u8::from(self.proba(input) >= 0.5)
    }

    /// Probability of the named class; 0 for a class the model does not know.
    pub fn class_probability(&self, input: &str, class: &str) -> f64 {
        let p = self.proba(input);
        if class == self.classes[1] {
            p
        } else if class == self.classes[0] {
            1.0 - p
        } else {
            0.0
        }
    }

    pub fn to_text(&self) -> String {
        let c = &self.model.config;
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "classes\t{}\t{}", self.classes[0], self.classes[1]);
        let _ = writeln!(
            out,
            "config\t{}\t{}\t{}\t{}",
            c.learning_rate, c.epochs, c.l2, c.seed
        );
        let _ = writeln!(out, "docs\t{}", self.vocabulary.n_docs);
        let _ = writeln!(out, "bias\t{}", self.model.bias);
        let _ = writeln!(out, "vocab\t{}", self.vocabulary.len());
        for (tok, &i) in &self.vocabulary.index {
            let _ = writeln!(out, "{tok}\t{}\t{}", self.vocabulary.df[i], self.model.weights[i]);
        }
        out
    }

    pub fn from_text(contents: &str) -> Result<Self, ModelError> {
        let mut lines = contents.lines().enumerate();
        let mut next = |key: &str| -> Result<(usize, Vec<String>), ModelError> {
            let (i, line) = lines.next().ok_or(ModelError::Format {
                line: 0,
                reason: format!("missing `{key}` line"),
            })?;
            let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
            if !key.is_empty() && fields[0] != key {
                return Err(ModelError::Format {
                    line: i + 1,
                    reason: format!("expected `{key}`, found `{}`", fields[0]),
                });
            }
            Ok((i + 1, fields))
        };
        let (_, header) = next("")?;
        if header.join("\t") != FORMAT_HEADER {
            return Err(ModelError::Format {
                line: 1,
                reason: format!("unsupported format `{}`", header.join("\t")),
            });
        }
        fn field<T: std::str::FromStr>(f: &[String], i: usize, line: usize) -> Result<T, ModelError> {
            f.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| ModelError::Format {
                    line,
                    reason: format!("bad or missing field {i}"),
                })
        }
        let (l, classes) = next("classes")?;
        let classes = [field::<String>(&classes, 1, l)?, field::<String>(&classes, 2, l)?];
        let (l, cfg) = next("config")?;
        let config = TrainConfig {
            learning_rate: field(&cfg, 1, l)?,
            epochs: field(&cfg, 2, l)?,
            l2: field(&cfg, 3, l)?,
            seed: field(&cfg, 4, l)?,
        };
        let (l, docs) = next("docs")?;
        let n_docs: usize = field(&docs, 1, l)?;
        let (l, bias) = next("bias")?;
        let bias: f64 = field(&bias, 1, l)?;
        let (l, vocab) = next("vocab")?;
        let v: usize = field(&vocab, 1, l)?;
        let mut tokens = Vec::with_capacity(v);
        let mut df = Vec::with_capacity(v);
        let mut weights = Vec::with_capacity(v);
        for _ in 0..v {
            let (l, row) = next("")?;
            let tok: String = field(&row, 0, l)?;
            if tokens.last().is_some_and(|prev: &String| *prev >= tok) {
                return Err(ModelError::Format {
                    line: l,
                    reason: "vocabulary not in strictly increasing order".into(),
                });
            }
            tokens.push(tok);
            df.push(field(&row, 1, l)?);
            weights.push(field(&row, 2, l)?);
        }
        Ok(TextClassifier {
            vocabulary: Vocabulary::from_parts(tokens, df, n_docs),
            model: LinearClassifier {
                weights,
                bias,
                config,
            },
            classes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        TextClassifier::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn idf_examples() {
        // oracle: ln((1+N)/(1+df)) + 1
        let v = fit_featurizer(&["a b", "a c"]).unwrap();
        assert_abs_diff_eq!(v.idf("a").unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.idf("b").unwrap(), 1.405_465_108_108_164_4, epsilon = 1e-12);
        assert_eq!(v.tokens().collect::<Vec<_>>(), vec!["a", "b", "c"]);
    }

    #[test]
    fn two_token_doc_matches_hand_computation() {
        let v = fit_featurizer(&["a b", "a c"]).unwrap();
        let x = v.transform("a b");
        let (ia, ib) = (1.0_f64, (1.5_f64).ln() + 1.0);
        let n = (ia * ia + ib * ib).sqrt();
        assert_eq!(x.entries.len(), 2);
        assert_abs_diff_eq!(x.entries[0].1, ia / n, epsilon = 1e-12);
        assert_abs_diff_eq!(x.entries[1].1, ib / n, epsilon = 1e-12);
        assert_eq!(v.transform("zzz"), FeatureVector::default());
        assert_eq!(v.transform("c").entries, vec![(2, 1.0)]);
    }

    #[test]
    fn predict_identities() {
        let m = LinearClassifier {
            weights: vec![3f64.ln()],
            bias: 0.0,
            config: TrainConfig::default(),
        };
        let zero = FeatureVector::default();
        assert_eq!(m.predict_proba(&zero).unwrap(), 0.5);
        assert_eq!(m.predict(&zero).unwrap(), 1);
        let x = FeatureVector {
            entries: vec![(0, 1.0)],
        };
        assert_abs_diff_eq!(m.predict_proba(&x).unwrap(), 0.75, epsilon = 1e-12);
        let bad = FeatureVector {
            entries: vec![(4, 1.0)],
        };
        assert!(matches!(
            m.predict_proba(&bad),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn separable_toy_set() {
        let xs: Vec<FeatureVector> = [(0, 1.0), (0, 0.8), (1, 1.0), (1, 0.9)]
            .iter()
            .map(|&e| FeatureVector { entries: vec![e] })
            .collect();
        let ys = [1, 1, 0, 0];
        let m = train(&xs, &ys, 2, TrainConfig::default()).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(m.predict(x).unwrap(), y);
        }
    }

    #[test]
    fn heavy_penalty_shrinks_weights() {
        let xs: Vec<FeatureVector> = [(0, 1.0), (1, 1.0), (1, 1.0)]
            .iter()
            .map(|&e| FeatureVector { entries: vec![e] })
            .collect();
        let ys = [1, 0, 1];
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            epochs: 2000,
            l2: 1e3,
            seed: 0,
        };
        let m = train(&xs, &ys, 2, cfg).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-3));
        let p = m.predict_proba(&xs[0]).unwrap();
        assert_abs_diff_eq!(p, sigmoid(m.bias), epsilon = 1e-3);
    }

    #[test]
    fn training_errors() {
        let x = vec![FeatureVector::default(); 2];
        assert!(matches!(train(&x, &[1, 1], 1, TrainConfig::default()), Err(ModelError::SingleClass)));
        assert!(matches!(train(&x, &[1], 1, TrainConfig::default()), Err(ModelError::LengthMismatch { .. })));
        assert!(matches!(fit_featurizer::<&str>(&[]), Err(ModelError::EmptyCorpus)));
    }

    #[test]
    fn divergence_is_surfaced() {
        let xs: Vec<FeatureVector> = (0..4)
            .map(|i| FeatureVector {
                entries: vec![(0, 1e200 * if i % 2 == 0 { 1.0 } else { -1.0 })],
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            ..TrainConfig::default()
        };
        let r = train(&xs, &[1, 0, 1, 0], 1, cfg);
        assert!(matches!(r, Err(ModelError::Diverged(_))), "{r:?}");
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let texts = ["he paid with cash", "she paid by card", "cash only", "card please"];
        let c = TextClassifier::fit(&texts, &[1, 0, 1, 0], ["no".into(), "yes".into()], TrainConfig::default())
            .unwrap();
        let back = TextClassifier::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert!(TextClassifier::from_text("lgsa-model v9\n").is_err());
        assert_eq!(c.class_probability("cash", "maybe"), 0.0);
        assert_abs_diff_eq!(
            c.class_probability("cash", "yes") + c.class_probability("cash", "no"),
            1.0,
            epsilon = 1e-15
        );
    }
}
