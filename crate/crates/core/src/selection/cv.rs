use rayon::prelude::*;
use serde::Serialize;

use super::folds::{complement, kfold_split, stratified_kfold};
use super::metrics::{confusion, polar_mean, ConfusionMatrix, Metric};
use super::{FittedPipeline, LabeledDataset, PipelineSpec, Result, SelectionError};
use crate::models::{ClassWeighting, N_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldScore {
    pub fold: usize,
    pub confusion: ConfusionMatrix,
    pub selection: [f64; N_CLASSES],
    pub recall: [f64; N_CLASSES],
}

impl FoldScore {
    pub fn new(fold: usize, confusion: ConfusionMatrix) -> Self {
        Self {
            fold,
            selection: Metric::Eq1.per_class(&confusion),
            recall: Metric::StandardRecall.per_class(&confusion),
            confusion,
        }
    }
}

/// Per-class scores averaged over folds. Both metrics are always filled;
/// `metric` picks the one used for ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub metric: Metric,
    pub selection: [f64; N_CLASSES],
    pub recall: [f64; N_CLASSES],
    pub folds: Vec<FoldScore>,
}

impl ScoreReport {
    pub fn from_folds(metric: Metric, folds: Vec<FoldScore>) -> Self {
        let k = folds.len() as f64;
        let mut selection = [0.0; N_CLASSES];
        let mut recall = [0.0; N_CLASSES];
        for f in &folds {
            for c in 0..N_CLASSES {
                selection[c] += f.selection[c];
                recall[c] += f.recall[c];
            }
        }
        for c in 0..N_CLASSES {
            selection[c] /= k;
            recall[c] /= k;
        }
        Self {
            metric,
            selection,
            recall,
            folds,
        }
    }

    /// Per-class scores under the ranking metric.
    pub fn scores(&self) -> [f64; N_CLASSES] {
        match self.metric {
            Metric::Eq1 => self.selection,
            Metric::StandardRecall => self.recall,
        }
    }

    /// Mean of the Negative and Positive scores under the ranking metric.
    pub fn objective(&self) -> f64 {
        polar_mean(&self.scores())
    }
}

fn run_fold(spec: &PipelineSpec, data: &LabeledDataset, test: &[usize]) -> Result<(ConfusionMatrix, FittedPipeline)> {
    let train = complement(data.len(), test);
    let (train_texts, train_labels) = data.subset(&train);
    let (test_texts, test_labels) = data.subset(test);
    let pipeline = FittedPipeline::fit(spec, &train_texts, &train_labels)?;
    let predicted = pipeline.predict(&test_texts)?;
    Ok((confusion(&test_labels, &predicted)?, pipeline))
}

fn run_folds(
    spec: &PipelineSpec,
    data: &LabeledDataset,
    folds: &[Vec<usize>],
    metric: Metric,
) -> Result<(ScoreReport, Vec<FittedPipeline>)> {
    let outcomes: Vec<_> = folds.par_iter().map(|test| run_fold(spec, data, test)).collect();
    let mut scores = Vec::with_capacity(folds.len());
    let mut pipelines = Vec::with_capacity(folds.len());
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let (cm, pipeline) = outcome.map_err(|e| e.in_fold(i))?;
        scores.push(FoldScore::new(i, cm));
        pipelines.push(pipeline);
    }
    Ok((ScoreReport::from_folds(metric, scores), pipelines))
}

/// Runs `spec` over explicit test folds. Every transform is fitted on the
/// training complement of each fold only.
pub fn cross_validate_on_folds(
    spec: &PipelineSpec,
    data: &LabeledDataset,
    folds: &[Vec<usize>],
    metric: Metric,
) -> Result<ScoreReport> {
    run_folds(spec, data, folds, metric).map(|(report, _)| report)
}

/// Shuffled k-fold cross-validation of one pipeline.
pub fn cross_validate(
    spec: &PipelineSpec,
    data: &LabeledDataset,
    k: usize,
    metric: Metric,
    seed: u64,
) -> Result<ScoreReport> {
    cross_validate_on_folds(spec, data, &kfold_split(data.len(), k, seed)?, metric)
}

/// Like [`cross_validate`] but also returns the folds and the pipeline
/// fitted for each of them.
pub fn cross_validate_detailed(
    spec: &PipelineSpec,
    data: &LabeledDataset,
    k: usize,
    metric: Metric,
    seed: u64,
) -> Result<(ScoreReport, Vec<Vec<usize>>, Vec<FittedPipeline>)> {
    let folds = kfold_split(data.len(), k, seed)?;
    let (report, pipelines) = run_folds(spec, data, &folds, metric)?;
    Ok((report, folds, pipelines))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightingComparison {
    pub chosen: ClassWeighting,
    pub unweighted: ScoreReport,
    pub weighted: ScoreReport,
}

pub const WEIGHTING_FOLDS: usize = 3;

/// Evaluates `spec` with and without equal class weighting on the same
/// stratified 3-fold split; ties keep the unweighted model.
pub fn compare_equal_weighting(
    spec: &PipelineSpec,
    data: &LabeledDataset,
    metric: Metric,
    seed: u64,
) -> Result<WeightingComparison> {
    let folds = stratified_kfold(&data.labels, WEIGHTING_FOLDS, seed)?;
    let arm = |weighting| {
        let mut s = *spec;
        s.model.class_weighting = weighting;
        cross_validate_on_folds(&s, data, &folds, metric)
    };
    let unweighted = arm(ClassWeighting::None)?;
    let weighted = arm(ClassWeighting::EqualClass)?;
    let chosen = if weighted.objective() > unweighted.objective() {
        ClassWeighting::EqualClass
    } else {
        ClassWeighting::None
    };
    Ok(WeightingComparison {
        chosen,
        unweighted,
        weighted,
    })
}

/// Fits preprocessing and model on every labeled row.
pub fn train_final(spec: &PipelineSpec, data: &LabeledDataset) -> Result<FittedPipeline> {
    if data.is_empty() {
        return Err(SelectionError::Unlabeled);
    }
    FittedPipeline::fit(spec, &data.texts, &data.labels)
}
