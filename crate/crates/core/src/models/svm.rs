//! RBF-kernel soft-margin SVM, one-vs-rest over the present classes.
//!
//! Each binary dual
//!
//! ```text
//! min ½ αᵀQα − eᵀα   s.t.  yᵀα = 0,  0 ≤ α_i ≤ C_i,   Q_ij = y_i y_j k(x_i, x_j)
//! ```
//!
//! is solved by SMO: pick the maximal-violating pair (first index by
//! gradient, second by second-order gain), solve the two-variable
//! subproblem analytically, clip to the box, repeat until the KKT gap
//! `max_{I_up} −y_t∇f_t − min_{I_low} −y_t∇f_t` falls to the tolerance.

use rayon::prelude::*;

use super::{argmax, class_counts, require_two_classes, ModelError, Result, N_CLASSES};
use crate::features::matrix::squared_distance;
use crate::features::FeatureMatrix;
use crate::labeling::SentimentClass;

/// Largest KKT residual a returned solution may have.
pub const KKT_TOLERANCE: f64 = 1e-3;
/// Residual at which the training solver stops; tighter than
/// [`KKT_TOLERANCE`] so the duals themselves land close to the optimum.
pub const SOLVER_TOLERANCE: f64 = 1e-4;
/// Pair updates allowed per binary problem, as a multiple of `n²`.
pub const UPDATE_CAP_FACTOR: usize = 100;
const TAU: f64 = 1e-12;

/// Pairwise squared Euclidean distances between training rows.
#[derive(Debug, Clone)]
pub struct SquaredDistances {
    n: usize,
    data: Vec<f64>,
}

impl SquaredDistances {
    pub fn new(x: &FeatureMatrix) -> Self {
        let n = x.n_rows();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| squared_distance(x.row(i), x.row(j))).collect())
            .collect();
        Self {
            n,
            data: rows.concat(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn kernel(&self, gamma: f64) -> Vec<f64> {
        self.data.iter().map(|d| (-gamma * d).exp()).collect()
    }
}

pub fn rbf_kernel_matrix(x: &FeatureMatrix, gamma: f64) -> Vec<f64> {
    SquaredDistances::new(x).kernel(gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    /// Intercept `b` of `f(x) = Σ α_i y_i k(x_i, x) + b`.
    pub bias: f64,
    pub updates: usize,
    pub kkt_residual: f64,
}

/// Solves one binary dual over a precomputed `n × n` kernel matrix.
/// `y` holds ±1 and `upper` the per-sample box bounds.
pub fn solve_binary(kernel: &[f64], y: &[f64], upper: &[f64], tolerance: f64) -> Result<BinarySolution> {
    let n = y.len();
    assert_eq!(kernel.len(), n * n, "kernel must be n × n");
    assert_eq!(upper.len(), n, "one bound per sample");
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let cap = UPDATE_CAP_FACTOR * n * n;
    let mut updates = 0;

    loop {
        let (pair, gap) = select_pair(kernel, y, upper, &alpha, &grad);
        let Some((i, j)) = pair.filter(|_| gap > tolerance) else {
            return Ok(BinarySolution {
                bias: -rho(y, upper, &alpha, &grad),
                kkt_residual: gap.max(0.0),
                alpha,
                updates,
            });
        };
        if updates >= cap {
            return Err(ModelError::NonConvergence {
                residual: gap,
                updates,
            });
        }
        updates += 1;

        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qii = q(i, i);
        let qjj = q(j, j);
        let qij = q(i, j);
        if y[i] != y[j] {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        alpha[i] = alpha[i].clamp(0.0, ci);
        alpha[j] = alpha[j].clamp(0.0, cj);

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }
}

fn at_upper(a: f64, c: f64) -> bool {
    a >= c
}

fn at_lower(a: f64) -> bool {
    a <= 0.0
}

/// Maximal violating pair with second-order choice of the partner, plus
/// the current KKT gap.
fn select_pair(kernel: &[f64], y: &[f64], upper: &[f64], alpha: &[f64], grad: &[f64]) -> (Option<(usize, usize)>, f64) {
    let n = y.len();
    let mut gmax = f64::NEG_INFINITY;
    let mut i_best = None;
    for t in 0..n {
        let in_up = if y[t] > 0.0 { !at_upper(alpha[t], upper[t]) } else { !at_lower(alpha[t]) };
        if in_up && -y[t] * grad[t] >= gmax {
            gmax = -y[t] * grad[t];
            i_best = Some(t);
        }
    }
    let Some(i) = i_best else {
        return (None, 0.0);
    };
    let mut gmax2 = f64::NEG_INFINITY;
    let mut j_best = None;
    let mut best_gain = f64::INFINITY;
    for t in 0..n {
        let in_low = if y[t] > 0.0 { !at_lower(alpha[t]) } else { !at_upper(alpha[t], upper[t]) };
        if !in_low {
            continue;
        }
        let v = y[t] * grad[t];
        if v >= gmax2 {
            gmax2 = v;
        }
        let grad_diff = gmax + v;
        if grad_diff > 0.0 {
            // Q_ii + Q_tt − 2 y_i y_t Q_it = K_ii + K_tt − 2 K_it
            let mut quad = kernel[i * n + i] + kernel[t * n + t] - 2.0 * kernel[i * n + t];
            if quad <= 0.0 {
                quad = TAU;
            }
            let gain = -(grad_diff * grad_diff) / quad;
            if gain <= best_gain {
                best_gain = gain;
                j_best = Some(t);
            }
        }
    }
    let gap = if gmax2.is_finite() { gmax + gmax2 } else { 0.0 };
    (j_best.map(|j| (i, j)), gap)
}

fn rho(y: &[f64], upper: &[f64], alpha: &[f64], grad: &[f64]) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_count) = (0.0, 0usize);
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if at_upper(alpha[t], upper[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_count += 1;
            free_sum += yg;
        }
    }
    if free_count > 0 {
        free_sum / free_count as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// KKT gap recomputed from scratch for a candidate dual solution.
pub fn kkt_residual(kernel: &[f64], y: &[f64], upper: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let grad: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * kernel[i * n + j] * alpha[j]).sum::<f64>() - 1.0)
        .collect();
    select_pair(kernel, y, upper, alpha, &grad).1.max(0.0)
}

/// One binary machine: support vectors with coefficients `α_i y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMachine {
    pub support_vectors: FeatureMatrix,
    pub coefficients: Vec<f64>,
    pub bias: f64,
}

impl BinaryMachine {
    pub fn decision(&self, row: &[f64], gamma: f64) -> f64 {
        self.support_vectors
            .rows()
            .zip(&self.coefficients)
            .map(|(sv, coef)| coef * (-gamma * squared_distance(sv, row)).exp())
            .sum::<f64>()
            + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub gamma: f64,
    /// Indexed by class; `None` for classes absent from training.
    pub machines: [Option<BinaryMachine>; N_CLASSES],
}

impl SvmModel {
    pub fn decision_values(&self, row: &[f64]) -> [f64; N_CLASSES] {
        let mut out = [f64::NEG_INFINITY; N_CLASSES];
        for (slot, machine) in out.iter_mut().zip(&self.machines) {
            if let Some(m) = machine {
                *slot = m.decision(row, self.gamma);
            }
        }
        out
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<SentimentClass> {
        x.rows().map(|r| argmax(&self.decision_values(r))).collect()
    }
}

/// Solves the one-vs-rest binary duals, one per present class.
pub fn fit_one_vs_rest(
    x: &FeatureMatrix,
    y: &[SentimentClass],
    c: f64,
    gamma: f64,
    weights: &[f64],
    distances: Option<&SquaredDistances>,
) -> Result<Vec<(SentimentClass, BinarySolution)>> {
    if x.n_rows() != y.len() || weights.len() != y.len() {
        return Err(ModelError::LengthMismatch {
            labels: y.len(),
            rows: x.n_rows(),
        });
    }
    require_two_classes(y)?;
    let owned;
    let distances = match distances {
        Some(d) => d,
        None => {
            owned = SquaredDistances::new(x);
            &owned
        }
    };
    let kernel = distances.kernel(gamma);
    let upper: Vec<f64> = weights.iter().map(|w| c * w).collect();
    let counts = class_counts(y);
    SentimentClass::ALL
        .into_iter()
        .filter(|class| counts[class.index()] > 0)
        .map(|class| {
            let signs: Vec<f64> = y.iter().map(|l| if *l == class { 1.0 } else { -1.0 }).collect();
            solve_binary(&kernel, &signs, &upper, SOLVER_TOLERANCE).map(|s| (class, s))
        })
        .collect()
}

pub fn train_rbf_svm(x: &FeatureMatrix, y: &[SentimentClass], c: f64, gamma: f64, weights: &[f64]) -> Result<SvmModel> {
    train_rbf_svm_with(x, y, c, gamma, weights, None)
}

pub(crate) fn train_rbf_svm_with(
    x: &FeatureMatrix,
    y: &[SentimentClass],
    c: f64,
    gamma: f64,
    weights: &[f64],
    distances: Option<&SquaredDistances>,
) -> Result<SvmModel> {
    let solutions = fit_one_vs_rest(x, y, c, gamma, weights, distances)?;
    let mut machines: [Option<BinaryMachine>; N_CLASSES] = Default::default();
    for (class, solution) in solutions {
        let support: Vec<usize> = (0..y.len()).filter(|&i| solution.alpha[i] > 0.0).collect();
        let coefficients = support
            .iter()
            .map(|&i| if y[i] == class { solution.alpha[i] } else { -solution.alpha[i] })
            .collect();
        machines[class.index()] = Some(BinaryMachine {
            support_vectors: x.select_rows(&support),
            coefficients,
            bias: solution.bias,
        });
    }
    Ok(SvmModel { gamma, machines })
}
