//! Confusion matrices and the two per-class scores reported side by side:
//! the selection score `TP / (TP + FP)` (column-wise) and standard recall
//! `TP / (TP + FN)` (row-wise). Both define 0/0 as 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Result, SelectionError};
use crate::labeling::SentimentClass;
use crate::models::N_CLASSES;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn get(&self, truth: SentimentClass, predicted: SentimentClass) -> usize {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: SentimentClass) -> usize {
        self.counts[c.index()][c.index()]
    }

    pub fn false_positives(&self, c: SentimentClass) -> usize {
        let k = c.index();
        (0..N_CLASSES).filter(|&t| t != k).map(|t| self.counts[t][k]).sum()
    }

    pub fn false_negatives(&self, c: SentimentClass) -> usize {
        let k = c.index();
        (0..N_CLASSES).filter(|&p| p != k).map(|p| self.counts[k][p]).sum()
    }
}

pub fn confusion(y_true: &[SentimentClass], y_pred: &[SentimentClass]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(SelectionError::LengthMismatch {
            truth: y_true.len(),
            predicted: y_pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in y_true.iter().zip(y_pred) {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `TP_c / (TP_c + FP_c)`; 0 when class `c` is never predicted.
pub fn selection_score(cm: &ConfusionMatrix, c: SentimentClass) -> f64 {
    let tp = cm.true_positives(c);
    ratio(tp, tp + cm.false_positives(c))
}

/// `TP_c / (TP_c + FN_c)`; 0 when class `c` never occurs.
pub fn standard_recall(cm: &ConfusionMatrix, c: SentimentClass) -> f64 {
    let tp = cm.true_positives(c);
    ratio(tp, tp + cm.false_negatives(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `TP / (TP + FP)`.
    #[default]
    Eq1,
    StandardRecall,
}

impl Metric {
    pub fn score(self, cm: &ConfusionMatrix, c: SentimentClass) -> f64 {
        match self {
            Metric::Eq1 => selection_score(cm, c),
            Metric::StandardRecall => standard_recall(cm, c),
        }
    }

    pub fn per_class(self, cm: &ConfusionMatrix) -> [f64; N_CLASSES] {
        SentimentClass::ALL.map(|c| self.score(cm, c))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Eq1 => "eq1",
            Metric::StandardRecall => "standard-recall",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "eq1" | "precision" => Ok(Metric::Eq1),
            "standard-recall" | "recall" => Ok(Metric::StandardRecall),
            other => Err(format!("unknown metric `{other}` (expected eq1 | standard-recall)")),
        }
    }
}

/// Mean of the Negative and Positive entries of a per-class score triple.
pub fn polar_mean(scores: &[f64; N_CLASSES]) -> f64 {
    (scores[SentimentClass::Negative.index()] + scores[SentimentClass::Positive.index()]) / 2.0
}
