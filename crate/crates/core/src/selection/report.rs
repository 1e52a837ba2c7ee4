//! CSV tables: winning hyperparameters per cell, per-class CV scores per
//! cell, and the final model per dataset.

use std::io::Write;

use super::cv::ScoreReport;
use super::grid::{Evaluation, GridResult};
use super::metrics::Metric;
use super::{PipelineSpec, Preprocessing};
use crate::models::{ClassWeighting, ModelFamily};

pub fn family_label(family: ModelFamily) -> &'static str {
    match family {
        ModelFamily::LogReg => "Log. Reg.",
        ModelFamily::MultinomialNB => "Multinm. Nve. Bys.",
        ModelFamily::RbfSvm => "RBF SVM",
        ModelFamily::KMeans => "K-Means",
    }
}

fn dataset_label(spec_variant: crate::corpus::DatasetVariant) -> &'static str {
    use crate::corpus::DatasetVariant::*;
    match spec_variant {
        Title => "Title",
        Description => "Description",
        Content => "Content",
        Combination => "Combo",
    }
}

fn triple(scores: &[f64; 3]) -> String {
    format!("{:.4}, {:.4}, {:.4}", scores[0], scores[1], scores[2])
}

fn columns(results: &[GridResult]) -> Vec<Preprocessing> {
    let mut out: Vec<Preprocessing> = Vec::new();
    for cell in results.iter().flat_map(|r| &r.cells) {
        if !out.contains(&cell.preprocessing) {
            out.push(cell.preprocessing);
        }
    }
    out
}

fn families(results: &[GridResult]) -> Vec<ModelFamily> {
    let mut out: Vec<ModelFamily> = Vec::new();
    for cell in results.iter().flat_map(|r| &r.cells) {
        if !out.contains(&cell.family) {
            out.push(cell.family);
        }
    }
    out
}

fn header(cols: &[Preprocessing]) -> Vec<String> {
    let mut h = vec!["dataset".to_string(), "model_class".to_string()];
    h.extend(cols.iter().map(|c| c.label().to_string()));
    h
}

/// Winning hyperparameters per (dataset, family) row and preprocessing column.
pub fn write_hyperparameter_table<W: Write>(results: &[GridResult], writer: W) -> csv::Result<()> {
    let cols = columns(results);
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(header(&cols))?;
    for result in results {
        for family in families(results) {
            let mut row = vec![dataset_label(result.variant).to_string(), family_label(family).to_string()];
            for col in &cols {
                row.push(match result.cell(col, family).and_then(|c| c.best_point()) {
                    Some(p) => p.hyperparameters.to_string(),
                    None if result.cell(col, family).is_some() => "infeasible".to_string(),
                    None => String::new(),
                });
            }
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-class CV scores `(Negative, Neutral, Positive)` of every cell winner
/// from the evaluation round, under `metric`.
pub fn write_score_table<W: Write>(
    results: &[GridResult],
    evaluations: &[Evaluation],
    metric: Metric,
    writer: W,
) -> csv::Result<()> {
    let cols = columns(results);
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(header(&cols))?;
    for (result, evaluation) in results.iter().zip(evaluations) {
        for family in families(results) {
            let mut row = vec![dataset_label(result.variant).to_string(), family_label(family).to_string()];
            for col in &cols {
                let entry = evaluation
                    .entries
                    .iter()
                    .find(|e| e.spec.preprocessing == *col && e.spec.model.family() == family);
                row.push(match entry {
                    Some(e) => triple(&pick(&e.report, metric)),
                    None if result.cell(col, family).is_some() => "infeasible".to_string(),
                    None => String::new(),
                });
            }
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn pick(report: &ScoreReport, metric: Metric) -> [f64; 3] {
    match metric {
        Metric::Eq1 => report.selection,
        Metric::StandardRecall => report.recall,
    }
}

/// One row per dataset: the final spec and its CV scores under both metrics.
pub fn write_final_table<W: Write>(finals: &[(PipelineSpec, ScoreReport)], writer: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "dataset",
        "model_class",
        "preprocessing",
        "hyperparameters",
        "weighting",
        "negative",
        "neutral",
        "positive",
        "negative_recall",
        "neutral_recall",
        "positive_recall",
    ])?;
    for (spec, report) in finals {
        let weighting = match spec.model.class_weighting {
            ClassWeighting::None => "none",
            ClassWeighting::EqualClass => "equal",
        };
        let mut row = vec![
            dataset_label(spec.dataset_variant).to_string(),
            family_label(spec.model.family()).to_string(),
            spec.preprocessing.to_string(),
            spec.model.hyperparameters.to_string(),
            weighting.to_string(),
        ];
        row.extend(report.selection.iter().map(|v| format!("{v:.4}")));
        row.extend(report.recall.iter().map(|v| format!("{v:.4}")));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
