//! Model selection: cross-validation, grid search, the equal-weighting
//! comparison, final retraining and the `.model` file format.

mod cv;
mod folds;
mod grid;
mod metrics;
mod persist;
pub mod report;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DatasetVariant, FeatureDataset};
use crate::features::{fit_svd, fit_tfidf, FeatureError, FeatureMatrix, NgramRange, SvdTransform, TfidfTransform};
use crate::labeling::{AggregatedLabel, SentimentClass};
use crate::models::{self, ModelError, ModelSpec, TrainedModel};

pub use cv::{compare_equal_weighting, cross_validate, cross_validate_detailed, cross_validate_on_folds, train_final,
    FoldScore, ScoreReport, WeightingComparison};
pub use folds::{complement, kfold_split, stratified_kfold};
pub use grid::{
    grid_search, select_final, EvaluatedCell, Evaluation, GridCell, GridDefinition, GridPoint, GridResult, PointOutcome,
};
pub use metrics::{confusion, polar_mean, selection_score, standard_recall, ConfusionMatrix, Metric};
pub use persist::{load_model, model_from_bytes, model_to_bytes, save_model, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("{folds} folds requested for {samples} samples")]
    TooManyFolds { folds: usize, samples: usize },
    #[error("class {class} has {count} samples, fewer than {folds} folds")]
    ClassTooSmall {
        class: SentimentClass,
        count: usize,
        folds: usize,
    },
    #[error("dataset has no labeled rows")]
    Unlabeled,
    #[error("grid has no candidates for {0}")]
    EmptyGrid(models::ModelFamily),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<SelectionError>,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("model file format version {0} is not supported")]
    VersionUnsupported(u16),
    #[error("model file is truncated")]
    Truncated,
    #[error("model file is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SelectionError {
    /// The model error at the bottom of any fold annotations.
    pub fn model_error(&self) -> Option<&ModelError> {
        match self {
            SelectionError::Model(e) => Some(e),
            SelectionError::Fold { source, .. } => source.model_error(),
            _ => None,
        }
    }

    fn in_fold(self, fold: usize) -> Self {
        SelectionError::Fold {
            fold,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, SelectionError>;

/// Labeled texts of one dataset variant, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub variant: DatasetVariant,
    pub sample_ids: Vec<String>,
    pub texts: Vec<String>,
    pub labels: Vec<SentimentClass>,
}

impl LabeledDataset {
    pub fn new(variant: DatasetVariant, texts: Vec<String>, labels: Vec<SentimentClass>) -> Result<Self> {
        if texts.len() != labels.len() {
            return Err(SelectionError::LengthMismatch {
                truth: labels.len(),
                predicted: texts.len(),
            });
        }
        if texts.is_empty() {
            return Err(SelectionError::Unlabeled);
        }
        let sample_ids = (0..texts.len()).map(|i| i.to_string()).collect();
        Ok(Self {
            variant,
            sample_ids,
            texts,
            labels,
        })
    }

    /// Keeps rows that carry a label.
    pub fn from_dataset(dataset: &FeatureDataset) -> Result<Self> {
        let rows: Vec<_> = dataset.rows.iter().filter(|r| r.label.is_some()).collect();
        if rows.is_empty() {
            return Err(SelectionError::Unlabeled);
        }
        Ok(Self {
            variant: dataset.variant,
            sample_ids: rows.iter().map(|r| r.sample_id.clone()).collect(),
            texts: rows.iter().map(|r| r.text.clone()).collect(),
            labels: rows.iter().filter_map(|r| r.label).collect(),
        })
    }

    /// Joins aggregated labels onto dataset rows by sample id; a label in
    /// `labels` overrides one already present on the row.
    pub fn join(dataset: &FeatureDataset, labels: &[AggregatedLabel]) -> Result<Self> {
        let by_id: std::collections::HashMap<&str, SentimentClass> =
            labels.iter().map(|l| (l.sample_id.as_str(), l.label)).collect();
        let mut joined = dataset.clone();
        for row in &mut joined.rows {
            if let Some(&label) = by_id.get(row.sample_id.as_str()) {
                row.label = Some(label);
            }
        }
        Self::from_dataset(&joined)
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub(crate) fn subset(&self, rows: &[usize]) -> (Vec<&str>, Vec<SentimentClass>) {
        (
            rows.iter().map(|&i| self.texts[i].as_str()).collect(),
            rows.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Vectorizer plus optional SVD reduction; one column of the grid tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Preprocessing {
    pub vectorizer: NgramRange,
    pub svd_k: Option<usize>,
}

impl Preprocessing {
    pub fn new(vectorizer: NgramRange, svd_k: Option<usize>) -> Self {
        Self { vectorizer, svd_k }
    }

    /// The four standard columns: unigram, unigram+bigram, each with and
    /// without an SVD reduction to `svd_k` dimensions.
    pub fn standard(svd_k: usize) -> [Preprocessing; 4] {
        [
            Preprocessing::new(NgramRange::Unigram, None),
            Preprocessing::new(NgramRange::UnigramBigram, None),
            Preprocessing::new(NgramRange::Unigram, Some(svd_k)),
            Preprocessing::new(NgramRange::UnigramBigram, Some(svd_k)),
        ]
    }

    pub fn use_svd(&self) -> bool {
        self.svd_k.is_some()
    }

    /// Column heading used in report tables.
    pub fn label(&self) -> &'static str {
        match (self.vectorizer, self.use_svd()) {
            (NgramRange::Unigram, false) => "Features 1",
            (NgramRange::UnigramBigram, false) => "Features 2",
            (NgramRange::Unigram, true) => "SVD Features 1",
            (NgramRange::UnigramBigram, true) => "SVD Features 2",
        }
    }
}

impl fmt::Display for Preprocessing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.vectorizer {
            NgramRange::Unigram => "TF-IDF Unigrams",
            NgramRange::UnigramBigram => "TF-IDF Bigrams",
        };
        match self.svd_k {
            Some(k) => write!(f, "{name} + SVD({k})"),
            None => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub dataset_variant: DatasetVariant,
    pub preprocessing: Preprocessing,
    pub model: ModelSpec,
}

impl PipelineSpec {
    pub fn new(dataset_variant: DatasetVariant, preprocessing: Preprocessing, model: ModelSpec) -> Self {
        Self {
            dataset_variant,
            preprocessing,
            model,
        }
    }

    pub fn use_svd(&self) -> bool {
        self.preprocessing.use_svd()
    }
}

/// TF-IDF (and optionally SVD) transforms fitted on one training split.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPreprocessing {
    pub tfidf: TfidfTransform,
    pub svd: Option<SvdTransform>,
}

impl FittedPreprocessing {
    /// Fits on `texts` and returns the transformed training matrix.
    pub fn fit<S: AsRef<str> + Sync>(config: &Preprocessing, texts: &[S]) -> Result<(Self, FeatureMatrix)> {
        let tfidf = fit_tfidf(texts, config.vectorizer)?;
        let x = tfidf.transform(texts);
        match config.svd_k {
            None => Ok((Self { tfidf, svd: None }, x)),
            Some(k) => {
                let svd = fit_svd(&x, k)?;
                let reduced = svd.transform(&x)?;
                Ok((Self { tfidf, svd: Some(svd) }, reduced))
            }
        }
    }

    pub fn transform<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<FeatureMatrix> {
        let x = self.tfidf.transform(texts);
        match &self.svd {
            None => Ok(x),
            Some(svd) => Ok(svd.transform(&x)?),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.svd.as_ref().map_or(self.tfidf.n_features(), SvdTransform::output_dim)
    }
}

/// Fitted transforms plus trained model; predicts straight from text.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub spec: PipelineSpec,
    pub preprocessing: FittedPreprocessing,
    pub model: TrainedModel,
}

impl FittedPipeline {
    pub fn fit<S: AsRef<str> + Sync>(spec: &PipelineSpec, texts: &[S], labels: &[SentimentClass]) -> Result<Self> {
        let (preprocessing, x) = FittedPreprocessing::fit(&spec.preprocessing, texts)?;
        let model = models::train(&spec.model, &x, labels)?;
        Ok(Self {
            spec: *spec,
            preprocessing,
            model,
        })
    }

    pub fn features<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<FeatureMatrix> {
        self.preprocessing.transform(texts)
    }

    pub fn predict<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<SentimentClass>> {
        let x = self.features(texts)?;
        Ok(self.model.predict(&x)?)
    }
}
