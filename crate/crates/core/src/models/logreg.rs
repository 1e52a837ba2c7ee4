//! Multinomial (softmax) logistic regression trained with L-BFGS.
//!
//! Objective: weighted mean cross-entropy plus `‖W‖²_F / (2C)`. The bias
//! is not penalized. Using the weighted mean keeps the optimum unchanged
//! when every sample is duplicated.

use std::collections::VecDeque;

use super::{argmax, class_counts, require_two_classes, ModelError, Result, N_CLASSES};
use crate::features::FeatureMatrix;
use crate::labeling::SentimentClass;

pub const MAX_ITERATIONS: usize = 5000;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
const HISTORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// `3 × d`, row-major by class. Rows of absent classes are zero.
    pub weights: Vec<f64>,
    /// `-inf` for classes absent from training.
    pub bias: [f64; N_CLASSES],
}

impl LogRegModel {
    pub fn input_dim(&self) -> usize {
        self.weights.len() / N_CLASSES
    }

    pub fn scores(&self, row: &[f64]) -> [f64; N_CLASSES] {
        let d = self.input_dim();
        let mut out = self.bias;
        for (c, s) in out.iter_mut().enumerate() {
            let w = &self.weights[c * d..(c + 1) * d];
            *s += w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<SentimentClass> {
        x.rows().map(|r| argmax(&self.scores(r))).collect()
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Optimizer bookkeeping: objective after every accepted step (index 0 is
/// the starting point) and the final gradient ∞-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegTrace {
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// The training objective over the classes present in `y`. Parameters are
/// laid out as `K × d` weights followed by `K` biases, `K` = present classes.
pub struct LogRegObjective<'a> {
    x: &'a FeatureMatrix,
    targets: Vec<usize>,
    weights: Vec<f64>,
    classes: Vec<usize>,
    inverse_c: f64,
}

impl<'a> LogRegObjective<'a> {
    pub fn new(x: &'a FeatureMatrix, y: &[SentimentClass], sample_weights: &[f64], c: f64) -> Result<Self> {
        if x.n_rows() != y.len() || sample_weights.len() != y.len() {
            return Err(ModelError::LengthMismatch {
                labels: y.len(),
                rows: x.n_rows(),
            });
        }
        require_two_classes(y)?;
        let counts = class_counts(y);
        let classes: Vec<usize> = (0..N_CLASSES).filter(|&k| counts[k] > 0).collect();
        let targets = y
            .iter()
            .map(|l| classes.iter().position(|&k| k == l.index()).expect("present class"))
            .collect();
        let total: f64 = sample_weights.iter().sum();
        Ok(Self {
            x,
            targets,
            weights: sample_weights.iter().map(|w| w / total).collect(),
            classes,
            inverse_c: 1.0 / c,
        })
    }

    pub fn n_params(&self) -> usize {
        self.classes.len() * (self.x.n_cols() + 1)
    }

    pub fn present_classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        self.evaluate(params, false).0
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        self.evaluate(params, true)
    }

    fn evaluate(&self, params: &[f64], with_gradient: bool) -> (f64, Vec<f64>) {
        let k = self.classes.len();
        let d = self.x.n_cols();
        let (w, b) = params.split_at(k * d);
        let mut grad = if with_gradient { vec![0.0; params.len()] } else { Vec::new() };
        let mut loss = 0.0;
        let mut z = vec![0.0; k];
        for ((row, &target), &sw) in self.x.rows().zip(&self.targets).zip(&self.weights) {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc = b[c] + w[c * d..(c + 1) * d].iter().zip(row).map(|(a, x)| a * x).sum::<f64>();
            }
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_norm = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += sw * (log_norm - z[target]);
            if with_gradient {
                for c in 0..k {
                    let p = (z[c] - log_norm).exp();
                    let residual = sw * (p - if c == target { 1.0 } else { 0.0 });
                    if residual != 0.0 {
                        let g = &mut grad[c * d..(c + 1) * d];
                        g.iter_mut().zip(row).for_each(|(gj, xj)| *gj += residual * xj);
                        grad[k * d + c] += residual;
                    }
                }
            }
        }
        let penalty = 0.5 * self.inverse_c * w.iter().map(|v| v * v).sum::<f64>();
        if with_gradient {
            for (g, wv) in grad[..k * d].iter_mut().zip(w) {
                *g += self.inverse_c * wv;
            }
        }
        (loss + penalty, grad)
    }
}

pub fn train_logreg(x: &FeatureMatrix, y: &[SentimentClass], c: f64, weights: &[f64]) -> Result<LogRegModel> {
    train_logreg_traced(x, y, c, weights).map(|(m, _)| m)
}

/// Trains from zero initialization, returning the optimizer trace alongside.
pub fn train_logreg_traced(
    x: &FeatureMatrix,
    y: &[SentimentClass],
    c: f64,
    weights: &[f64],
) -> Result<(LogRegModel, LogRegTrace)> {
    let objective = LogRegObjective::new(x, y, weights, c)?;
    let (params, trace) = minimize_lbfgs(&objective, vec![0.0; objective.n_params()]);

    let d = x.n_cols();
    let k = objective.classes.len();
    let mut model = LogRegModel {
        weights: vec![0.0; N_CLASSES * d],
        bias: [f64::NEG_INFINITY; N_CLASSES],
    };
    for (slot, &class) in objective.classes.iter().enumerate() {
        model.weights[class * d..(class + 1) * d].copy_from_slice(&params[slot * d..(slot + 1) * d]);
        model.bias[class] = params[k * d + slot];
    }
    Ok((model, trace))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, g| m.max(g.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn minimize_lbfgs(objective: &LogRegObjective<'_>, mut params: Vec<f64>) -> (Vec<f64>, LogRegTrace) {
    let (mut value, mut grad) = objective.value_and_gradient(&params);
    let mut trace = LogRegTrace {
        objective: vec![value],
        iterations: 0,
        gradient_norm: inf_norm(&grad),
    };
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(HISTORY);

    while trace.iterations < MAX_ITERATIONS && trace.gradient_norm > GRADIENT_TOLERANCE {
        let mut direction = two_loop(&grad, &memory);
        let mut slope = dot(&direction, &grad);
        if !(slope < 0.0) {
            memory.clear();
            direction = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }
        let mut step = if memory.is_empty() {
            (1.0 / direction.iter().map(|v| v * v).sum::<f64>().sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate: Vec<f64> = params.iter().zip(&direction).map(|(p, d)| p + step * d).collect();
            let candidate_value = objective.value(&candidate);
            if candidate_value <= value + ARMIJO * step * slope {
                accepted = Some((candidate, candidate_value));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_value)) = accepted else {
            if memory.is_empty() {
                // no descent possible even along the gradient: numerically converged
                break;
            }
            memory.clear();
            continue;
        };

        let (_, next_grad) = objective.value_and_gradient(&next);
        let s: Vec<f64> = next.iter().zip(&params).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&yv, &yv).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if memory.len() == HISTORY {
                memory.pop_front();
            }
            memory.push_back((s, yv, 1.0 / sy));
        }
        params = next;
        value = next_value;
        grad = next_grad;
        trace.iterations += 1;
        trace.objective.push(value);
        trace.gradient_norm = inf_norm(&grad);
    }
    (params, trace)
}

fn two_loop(grad: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
