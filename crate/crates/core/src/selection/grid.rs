use std::cmp::Ordering;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{cross_validate_on_folds, FoldScore, ScoreReport};
use super::folds::{complement, kfold_split};
use super::metrics::{confusion, ConfusionMatrix, Metric};
use super::{FittedPreprocessing, LabeledDataset, PipelineSpec, Preprocessing, Result, SelectionError};
use crate::corpus::DatasetVariant;
use crate::features::FeatureMatrix;
use crate::labeling::SentimentClass;
use crate::models::svm::SquaredDistances;
use crate::models::{self, Hyperparameters, ModelError, ModelFamily, ModelSpec};

/// Candidate hyperparameter values per model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDefinition {
    pub logreg_c: Vec<f64>,
    pub nb_alpha: Vec<f64>,
    pub svm_c: Vec<f64>,
    pub svm_gamma: Vec<f64>,
    pub kmeans_n: Vec<usize>,
}

impl Default for GridDefinition {
    fn default() -> Self {
        let c = vec![1e-5, 1e-4, 1e-3, 0.01, 0.1, 1.0, 10.0, 100.0];
        Self {
            logreg_c: c.clone(),
            nb_alpha: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            svm_c: c,
            svm_gamma: vec![1e-8, 1e-4, 0.01, 1.0, 10.0],
            kmeans_n: vec![3, 4, 5],
        }
    }
}

impl GridDefinition {
    /// Grid points of one family in enumeration order (C outer, γ inner).
    pub fn points(&self, family: ModelFamily) -> Vec<Hyperparameters> {
        match family {
            ModelFamily::LogReg => self.logreg_c.iter().map(|&c| Hyperparameters::LogReg { c }).collect(),
            ModelFamily::MultinomialNB => self
                .nb_alpha
                .iter()
                .map(|&alpha| Hyperparameters::MultinomialNb { alpha })
                .collect(),
            ModelFamily::RbfSvm => self
                .svm_c
                .iter()
                .flat_map(|&c| self.svm_gamma.iter().map(move |&gamma| Hyperparameters::RbfSvm { c, gamma }))
                .collect(),
            ModelFamily::KMeans => self
                .kmeans_n
                .iter()
                .map(|&n_clusters| Hyperparameters::KMeans { n_clusters })
                .collect(),
        }
    }

    /// Single-point grid for `hyperparameters`' family.
    pub fn single(hyperparameters: Hyperparameters) -> Self {
        let mut grid = Self {
            logreg_c: vec![],
            nb_alpha: vec![],
            svm_c: vec![],
            svm_gamma: vec![],
            kmeans_n: vec![],
        };
        match hyperparameters {
            Hyperparameters::LogReg { c } => grid.logreg_c.push(c),
            Hyperparameters::MultinomialNb { alpha } => grid.nb_alpha.push(alpha),
            Hyperparameters::RbfSvm { c, gamma } => {
                grid.svm_c.push(c);
                grid.svm_gamma.push(gamma);
            }
            Hyperparameters::KMeans { n_clusters } => grid.kmeans_n.push(n_clusters),
        }
        grid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PointOutcome {
    Scored(ScoreReport),
    /// The family cannot run on this preprocessing (naive Bayes on SVD
    /// features, which can be negative).
    Infeasible(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub hyperparameters: Hyperparameters,
    pub outcome: PointOutcome,
}

impl GridPoint {
    pub fn report(&self) -> Option<&ScoreReport> {
        match &self.outcome {
            PointOutcome::Scored(r) => Some(r),
            PointOutcome::Infeasible(_) => None,
        }
    }
}

/// Every grid point of one (preprocessing, family) pair and the winner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub variant: DatasetVariant,
    pub preprocessing: Preprocessing,
    pub family: ModelFamily,
    pub seed: u64,
    pub points: Vec<GridPoint>,
    pub best: Option<usize>,
}

impl GridCell {
    pub fn best_point(&self) -> Option<&GridPoint> {
        self.best.map(|i| &self.points[i])
    }

    pub fn best_spec(&self) -> Option<PipelineSpec> {
        self.best_point().map(|p| {
            PipelineSpec::new(
                self.variant,
                self.preprocessing,
                ModelSpec::new(p.hyperparameters).with_seed(self.seed),
            )
        })
    }

    pub fn best_report(&self) -> Option<&ScoreReport> {
        self.best_point().and_then(GridPoint::report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub variant: DatasetVariant,
    pub metric: Metric,
    pub folds: usize,
    pub cells: Vec<GridCell>,
}

impl GridResult {
    pub fn cell(&self, preprocessing: &Preprocessing, family: ModelFamily) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| &c.preprocessing == preprocessing && c.family == family)
    }
}

fn compare_keys(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Higher objective first, then the smaller complexity key.
fn ranks_above(a: (f64, &[f64]), b: (f64, &[f64])) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => compare_keys(a.1, b.1) == Ordering::Less,
    }
}

struct FoldData {
    test_labels: Vec<SentimentClass>,
    train_labels: Vec<SentimentClass>,
    x_train: FeatureMatrix,
    x_test: FeatureMatrix,
    distances: OnceLock<SquaredDistances>,
}

fn prepare_fold(config: &Preprocessing, data: &LabeledDataset, test: &[usize]) -> Result<FoldData> {
    let train = complement(data.len(), test);
    let (train_texts, train_labels) = data.subset(&train);
    let (test_texts, test_labels) = data.subset(test);
    let (fitted, x_train) = FittedPreprocessing::fit(config, &train_texts)?;
    let x_test = fitted.transform(&test_texts)?;
    Ok(FoldData {
        test_labels,
        train_labels,
        x_train,
        x_test,
        distances: OnceLock::new(),
    })
}

fn evaluate_point(spec: &ModelSpec, fold: &FoldData) -> Result<ConfusionMatrix> {
    let distances = match spec.family() {
        ModelFamily::RbfSvm => Some(fold.distances.get_or_init(|| SquaredDistances::new(&fold.x_train))),
        _ => None,
    };
    let model = models::train_with(spec, &fold.x_train, &fold.train_labels, distances)?;
    let predicted = model.predict(&fold.x_test)?;
    confusion(&fold.test_labels, &predicted)
}

/// Grid-search cross-validation over every (preprocessing, family) cell.
///
/// Folds are shared by all cells. Transforms are fitted once per
/// (preprocessing, fold) on the training split only. Naive Bayes points
/// that meet negative features are recorded as infeasible; any other
/// training error aborts the search. Cells are returned in
/// (preprocessing, family) input order.
pub fn grid_search(
    data: &LabeledDataset,
    preprocessings: &[Preprocessing],
    families: &[ModelFamily],
    grid: &GridDefinition,
    k: usize,
    metric: Metric,
    seed: u64,
) -> Result<GridResult> {
    for &family in families {
        if grid.points(family).is_empty() {
            return Err(SelectionError::EmptyGrid(family));
        }
    }
    let folds = kfold_split(data.len(), k, seed)?;
    let mut cells = Vec::new();
    for config in preprocessings {
        let prepared: Vec<Result<FoldData>> = folds.par_iter().map(|t| prepare_fold(config, data, t)).collect();
        let mut fold_data = Vec::with_capacity(k);
        for (i, f) in prepared.into_iter().enumerate() {
            fold_data.push(f.map_err(|e| e.in_fold(i))?);
        }
        for &family in families {
            let hyper = grid.points(family);
            let units: Vec<(usize, usize)> = (0..hyper.len()).flat_map(|p| (0..k).map(move |f| (p, f))).collect();
            let outcomes: Vec<Result<ConfusionMatrix>> = units
                .par_iter()
                .map(|&(p, f)| evaluate_point(&ModelSpec::new(hyper[p]).with_seed(seed), &fold_data[f]))
                .collect();
            let mut outcomes = outcomes.into_iter();
            let mut points = Vec::with_capacity(hyper.len());
            for &h in &hyper {
                let mut scores = Vec::with_capacity(k);
                let mut infeasible = None;
                for f in 0..k {
                    match outcomes.next().expect("one outcome per unit") {
                        Ok(cm) => scores.push(FoldScore::new(f, cm)),
                        Err(SelectionError::Model(ModelError::NonNegativeRequired(min))) => {
                            infeasible.get_or_insert(format!("requires nonnegative features (min {min:.4})"));
                        }
                        Err(e) => return Err(e.in_fold(f)),
                    }
                }
                let outcome = match infeasible {
                    Some(reason) => PointOutcome::Infeasible(reason),
                    None => PointOutcome::Scored(ScoreReport::from_folds(metric, scores)),
                };
                points.push(GridPoint {
                    hyperparameters: h,
                    outcome,
                });
            }
            let mut best: Option<usize> = None;
            for (i, p) in points.iter().enumerate() {
                let Some(report) = p.report() else { continue };
                let candidate = (report.objective(), &p.hyperparameters.complexity()[..]);
                let replace = match best {
                    None => true,
                    Some(b) => {
                        let current = &points[b];
                        let r = current.report().expect("best is scored");
                        ranks_above(candidate, (r.objective(), &current.hyperparameters.complexity()[..]))
                    }
                };
                if replace {
                    best = Some(i);
                }
            }
            cells.push(GridCell {
                variant: data.variant,
                preprocessing: *config,
                family,
                seed,
                points,
                best,
            });
        }
    }
    Ok(GridResult {
        variant: data.variant,
        metric,
        folds: k,
        cells,
    })
}

/// One cell winner re-scored in the evaluation round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluatedCell {
    pub spec: PipelineSpec,
    pub report: ScoreReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub entries: Vec<EvaluatedCell>,
    pub selected: usize,
}

impl Evaluation {
    pub fn selected(&self) -> &EvaluatedCell {
        &self.entries[self.selected]
    }
}

fn selection_key(spec: &PipelineSpec) -> Vec<f64> {
    let mut key = vec![spec.preprocessing.svd_k.map_or(0.0, |k| k as f64)];
    key.extend(spec.model.hyperparameters.complexity());
    key.push(spec.model.family() as u8 as f64);
    key.push(spec.preprocessing.vectorizer as u8 as f64);
    key
}

/// Re-scores every cell winner with a fresh k-fold shuffle and picks the
/// best by objective; ties go to fewer SVD dimensions, then the smaller
/// hyperparameter key.
pub fn select_final(result: &GridResult, data: &LabeledDataset, k: usize, seed: u64) -> Result<Evaluation> {
    let folds = kfold_split(data.len(), k, seed)?;
    let mut entries = Vec::new();
    for cell in &result.cells {
        if let Some(spec) = cell.best_spec() {
            let report = cross_validate_on_folds(&spec, data, &folds, result.metric)?;
            entries.push(EvaluatedCell { spec, report });
        }
    }
    let mut selected: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        let key = selection_key(&e.spec);
        let replace = match selected {
            None => true,
            Some(b) => {
                let cur = &entries[b];
                ranks_above((e.report.objective(), &key), (cur.report.objective(), &selection_key(&cur.spec)))
            }
        };
        if replace {
            selected = Some(i);
        }
    }
    let selected = selected.ok_or(SelectionError::Unlabeled)?;
    Ok(Evaluation { entries, selected })
}
