//! Multinomial naive Bayes with additive (Lidstone) smoothing.

use super::{argmax, require_two_classes, ModelError, Result, N_CLASSES};
use crate::features::FeatureMatrix;
use crate::labeling::SentimentClass;

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayesModel {
    /// `ln(weighted class count / total weight)`; `-inf` for absent classes.
    pub log_prior: [f64; N_CLASSES],
    /// `3 × d`, row-major by class.
    pub log_likelihood: Vec<f64>,
}

impl NaiveBayesModel {
    pub fn input_dim(&self) -> usize {
        self.log_likelihood.len() / N_CLASSES
    }

    pub fn joint_log_likelihood(&self, row: &[f64]) -> [f64; N_CLASSES] {
        let d = self.input_dim();
        let mut out = self.log_prior;
        for (c, s) in out.iter_mut().enumerate() {
            let ll = &self.log_likelihood[c * d..(c + 1) * d];
            *s += ll.iter().zip(row).map(|(l, x)| l * x).sum::<f64>();
        }
        out
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<SentimentClass> {
        x.rows().map(|r| argmax(&self.joint_log_likelihood(r))).collect()
    }
}

/// Closed form: `ln P(c) = ln(w_c / Σw)` and
/// `ln θ_cj = ln((Σ_{i∈c} w_i x_ij + α) / (Σ_{i∈c} w_i Σ_j x_ij + α d))`.
pub fn train_mnb(x: &FeatureMatrix, y: &[SentimentClass], alpha: f64, weights: &[f64]) -> Result<NaiveBayesModel> {
    if x.n_rows() != y.len() || weights.len() != y.len() {
        return Err(ModelError::LengthMismatch {
            labels: y.len(),
            rows: x.n_rows(),
        });
    }
    if let Some(min) = x.min_value().filter(|&m| m < 0.0) {
        return Err(ModelError::NonNegativeRequired(min));
    }
    require_two_classes(y)?;
    let d = x.n_cols();
    let mut class_weight = [0.0; N_CLASSES];
    let mut feature_totals = vec![0.0; N_CLASSES * d];
    for ((row, label), &w) in x.rows().zip(y).zip(weights) {
        let c = label.index();
        class_weight[c] += w;
        let totals = &mut feature_totals[c * d..(c + 1) * d];
        totals.iter_mut().zip(row).for_each(|(t, v)| *t += w * v);
    }
    let total_weight: f64 = class_weight.iter().sum();
    let mut log_prior = [0.0; N_CLASSES];
    for c in 0..N_CLASSES {
        log_prior[c] = (class_weight[c] / total_weight).ln();
    }
    let mut log_likelihood = vec![0.0; N_CLASSES * d];
    for c in 0..N_CLASSES {
        let totals = &feature_totals[c * d..(c + 1) * d];
        let denom = totals.iter().sum::<f64>() + alpha * d as f64;
        for (ll, t) in log_likelihood[c * d..(c + 1) * d].iter_mut().zip(totals) {
            *ll = ((t + alpha) / denom).ln();
        }
    }
    Ok(NaiveBayesModel {
        log_prior,
        log_likelihood,
    })
}
