//! The four classifier families behind one train/predict contract.
//!
//! Every model predicts one of the three [`SentimentClass`] values. Classes
//! absent from the training labels are never predicted.

pub mod kmeans;
pub mod logreg;
pub mod naive_bayes;
pub mod svm;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::labeling::SentimentClass;

pub use kmeans::{lloyd, Clustering, KMeansModel};
pub use logreg::{LogRegModel, LogRegObjective, LogRegTrace};
pub use naive_bayes::NaiveBayesModel;
pub use svm::{BinaryMachine, BinarySolution, SvmModel};

pub const N_CLASSES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("multinomial naive bayes requires nonnegative features (found {0})")]
    NonNegativeRequired(f64),
    #[error("svm solver did not converge: kkt residual {residual:.3e} after {updates} pair updates")]
    NonConvergence { residual: f64, updates: usize },
    #[error("{n_clusters} clusters requested for {n_rows} training rows")]
    TooManyClusters { n_clusters: usize, n_rows: usize },
    #[error("dimension mismatch: model expects {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{labels} labels for {rows} rows")]
    LengthMismatch { labels: usize, rows: usize },
    #[error("cannot train on zero rows")]
    Empty,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelFamily {
    LogReg,
    MultinomialNB,
    RbfSvm,
    KMeans,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::LogReg,
        ModelFamily::MultinomialNB,
        ModelFamily::RbfSvm,
        ModelFamily::KMeans,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::LogReg => "logreg",
            ModelFamily::MultinomialNB => "multinomial_nb",
            ModelFamily::RbfSvm => "rbf_svm",
            ModelFamily::KMeans => "kmeans",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Hyperparameters {
    LogReg { c: f64 },
    MultinomialNb { alpha: f64 },
    RbfSvm { c: f64, gamma: f64 },
    KMeans { n_clusters: usize },
}

impl Hyperparameters {
    pub fn family(&self) -> ModelFamily {
        match self {
            Hyperparameters::LogReg { .. } => ModelFamily::LogReg,
            Hyperparameters::MultinomialNb { .. } => ModelFamily::MultinomialNB,
            Hyperparameters::RbfSvm { .. } => ModelFamily::RbfSvm,
            Hyperparameters::KMeans { .. } => ModelFamily::KMeans,
        }
    }

    /// Ordering key used to break score ties toward simpler models.
    pub fn complexity(&self) -> [f64; 4] {
        match *self {
            Hyperparameters::LogReg { c } => [c, 0.0, 0.0, 0.0],
            Hyperparameters::MultinomialNb { alpha } => [0.0, 0.0, alpha, 0.0],
            Hyperparameters::RbfSvm { c, gamma } => [c, gamma, 0.0, 0.0],
            Hyperparameters::KMeans { n_clusters } => [0.0, 0.0, 0.0, n_clusters as f64],
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ModelError::InvalidHyperparameter(format!("{name} = {v} must be positive")))
            }
        };
        match *self {
            Hyperparameters::LogReg { c } => positive("C", c),
            Hyperparameters::MultinomialNb { alpha } => positive("alpha", alpha),
            Hyperparameters::RbfSvm { c, gamma } => positive("C", c).and(positive("gamma", gamma)),
            Hyperparameters::KMeans { n_clusters: 0 } => {
                Err(ModelError::InvalidHyperparameter("n_clusters must be at least 1".into()))
            }
            Hyperparameters::KMeans { .. } => Ok(()),
        }
    }
}

impl fmt::Display for Hyperparameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyperparameters::LogReg { c } => write!(f, "C: {c}"),
            Hyperparameters::MultinomialNb { alpha } => write!(f, "alpha: {alpha}"),
            Hyperparameters::RbfSvm { c, gamma } => write!(f, "C: {c} gamma: {gamma}"),
            Hyperparameters::KMeans { n_clusters } => write!(f, "n: {n_clusters}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum ClassWeighting {
    #[default]
    None,
    EqualClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hyperparameters: Hyperparameters,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(hyperparameters: Hyperparameters) -> Self {
        Self {
            hyperparameters,
            class_weighting: ClassWeighting::None,
            seed: 0,
        }
    }

    pub fn family(&self) -> ModelFamily {
        self.hyperparameters.family()
    }

    pub fn with_weighting(mut self, weighting: ClassWeighting) -> Self {
        self.class_weighting = weighting;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParameters {
    LogReg(LogRegModel),
    MultinomialNb(NaiveBayesModel),
    RbfSvm(SvmModel),
    KMeans(KMeansModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub input_dim: usize,
    pub parameters: ModelParameters,
}

impl TrainedModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<SentimentClass>> {
        predict(self, x)
    }
}

/// Per-sample weights `n / (K_present * n_c)`, so every present class
/// carries the same total weight.
pub fn equal_class_weights(labels: &[SentimentClass]) -> Vec<f64> {
    let counts = class_counts(labels);
    let present = counts.iter().filter(|&&c| c > 0).count();
    let n = labels.len() as f64;
    labels
        .iter()
        .map(|l| n / (present as f64 * counts[l.index()] as f64))
        .collect()
}

pub(crate) fn class_counts(labels: &[SentimentClass]) -> [usize; N_CLASSES] {
    let mut counts = [0; N_CLASSES];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// Index of the largest score, ties to the lower class index.
pub(crate) fn argmax(scores: &[f64; N_CLASSES]) -> SentimentClass {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    SentimentClass::from_index(best).expect("class index in range")
}

fn check_training_input(x: &FeatureMatrix, y: &[SentimentClass]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(ModelError::LengthMismatch {
            labels: y.len(),
            rows: x.n_rows(),
        });
    }
    if y.is_empty() {
        return Err(ModelError::Empty);
    }
    Ok(())
}

fn require_two_classes(y: &[SentimentClass]) -> Result<()> {
    if class_counts(y).iter().filter(|&&c| c > 0).count() < 2 {
        Err(ModelError::SingleClass)
    } else {
        Ok(())
    }
}

/// Row subset with every present class cut down to the size of the
/// smallest one, drawn without replacement from a seeded shuffle.
pub fn balanced_subsample(y: &[SentimentClass], seed: u64) -> Vec<usize> {
    let counts = class_counts(y);
    let Some(smallest) = counts.iter().copied().filter(|&c| c > 0).min() else {
        return Vec::new();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for class in SentimentClass::ALL {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        members.shuffle(&mut rng);
        keep.extend(members.into_iter().take(smallest));
    }
    keep.sort_unstable();
    keep
}

/// Trains the family named by `spec`, applying its class weighting.
pub fn train(spec: &ModelSpec, x: &FeatureMatrix, y: &[SentimentClass]) -> Result<TrainedModel> {
    train_with(spec, x, y, None)
}

pub(crate) fn train_with(
    spec: &ModelSpec,
    x: &FeatureMatrix,
    y: &[SentimentClass],
    distances: Option<&svm::SquaredDistances>,
) -> Result<TrainedModel> {
    spec.hyperparameters.validate()?;
    check_training_input(x, y)?;
    let weights = match spec.class_weighting {
        ClassWeighting::None => vec![1.0; y.len()],
        ClassWeighting::EqualClass => equal_class_weights(y),
    };
    let parameters = match spec.hyperparameters {
        Hyperparameters::LogReg { c } => ModelParameters::LogReg(logreg::train_logreg(x, y, c, &weights)?),
        Hyperparameters::MultinomialNb { alpha } => {
            ModelParameters::MultinomialNb(naive_bayes::train_mnb(x, y, alpha, &weights)?)
        }
        Hyperparameters::RbfSvm { c, gamma } => {
            ModelParameters::RbfSvm(svm::train_rbf_svm_with(x, y, c, gamma, &weights, distances)?)
        }
        Hyperparameters::KMeans { n_clusters } => {
            let model = match spec.class_weighting {
                ClassWeighting::None => kmeans::train_kmeans_classifier(x, y, n_clusters, spec.seed)?,
                ClassWeighting::EqualClass => {
                    let rows = balanced_subsample(y, spec.seed);
                    let labels: Vec<SentimentClass> = rows.iter().map(|&i| y[i]).collect();
                    kmeans::train_kmeans_classifier(&x.select_rows(&rows), &labels, n_clusters, spec.seed)?
                }
            };
            ModelParameters::KMeans(model)
        }
    };
    Ok(TrainedModel {
        spec: *spec,
        input_dim: x.n_cols(),
        parameters,
    })
}

pub fn predict(model: &TrainedModel, x: &FeatureMatrix) -> Result<Vec<SentimentClass>> {
    if x.n_cols() != model.input_dim {
        return Err(ModelError::DimensionMismatch {
            expected: model.input_dim,
            found: x.n_cols(),
        });
    }
    Ok(match &model.parameters {
        ModelParameters::LogReg(m) => m.predict(x),
        ModelParameters::MultinomialNb(m) => m.predict(x),
        ModelParameters::RbfSvm(m) => m.predict(x),
        ModelParameters::KMeans(m) => m.predict(x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use SentimentClass::*;

    #[test]
    fn equal_weights_examples() {
        let mut labels = vec![Negative; 20];
        labels.extend(vec![Neutral; 60]);
        labels.extend(vec![Positive; 20]);
        let w = equal_class_weights(&labels);
        assert!((w[0] - 100.0 / 60.0).abs() < 1e-12);
        assert!((w[0] - 1.6667).abs() < 1e-4);
        assert!((w[20] - 0.5556).abs() < 1e-4);
        assert!((w[99] - 1.6667).abs() < 1e-4);

        let balanced = [Negative, Neutral, Positive, Positive, Neutral, Negative];
        assert!(equal_class_weights(&balanced).iter().all(|&v| v == 1.0));
        assert!(equal_class_weights(&[Positive; 5]).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn argmax_ties_to_lower_index() {
        assert_eq!(argmax(&[1.0, 1.0, 0.0]), Negative);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), Neutral);
        assert_eq!(argmax(&[f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0]), Positive);
    }

    #[test]
    fn balanced_subsample_is_balanced_and_seeded() {
        let mut y = vec![Negative; 3];
        y.extend(vec![Neutral; 7]);
        y.extend(vec![Positive; 5]);
        let a = balanced_subsample(&y, 9);
        assert_eq!(a.len(), 9);
        let labels: Vec<_> = a.iter().map(|&i| y[i]).collect();
        assert_eq!(class_counts(&labels), [3, 3, 3]);
        assert_eq!(a, balanced_subsample(&y, 9));
    }

    #[test]
    fn invalid_hyperparameters() {
        let x = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let y = [Negative, Positive];
        let bad = ModelSpec::new(Hyperparameters::LogReg { c: -1.0 });
        assert!(matches!(train(&bad, &x, &y), Err(ModelError::InvalidHyperparameter(_))));
        let bad = ModelSpec::new(Hyperparameters::KMeans { n_clusters: 0 });
        assert!(matches!(train(&bad, &x, &y), Err(ModelError::InvalidHyperparameter(_))));
        let ok = ModelSpec::new(Hyperparameters::LogReg { c: 1.0 });
        assert!(matches!(train(&ok, &x, &y[..1]), Err(ModelError::LengthMismatch { .. })));
    }
}
