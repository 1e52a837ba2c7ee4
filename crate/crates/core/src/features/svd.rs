//! Truncated SVD (latent semantic analysis) over dense feature matrices.

use nalgebra::DMatrix;

use super::matrix::dot;
use super::{FeatureError, FeatureMatrix, Result};

pub const DEFAULT_SVD_COMPONENTS: usize = 100;

/// Top right singular vectors of a training matrix, stored column-wise in
/// a `input_dim × output_dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTransform {
    pub components: FeatureMatrix,
    pub singular_values: Vec<f64>,
}

impl SvdTransform {
    pub fn from_parts(components: FeatureMatrix, singular_values: Vec<f64>) -> Option<Self> {
        (components.n_cols() == singular_values.len()).then_some(Self {
            components,
            singular_values,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.components.n_rows()
    }

    pub fn output_dim(&self) -> usize {
        self.components.n_cols()
    }

    /// Component `c` as a vector of length `input_dim`.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.components.rows().map(|r| r[c]).collect()
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        apply_svd(self, x)
    }
}

/// Keeps `min(k, n_rows, n_cols)` components. Singular values are sorted
/// nonincreasing and every component's largest-magnitude entry (first one
/// on ties) is made nonnegative.
pub fn fit_svd(x: &FeatureMatrix, k: usize) -> Result<SvdTransform> {
    let (n, d) = (x.n_rows(), x.n_cols());
    if n == 0 || d == 0 {
        return Err(FeatureError::EmptyMatrix);
    }
    let k_eff = k.min(n).min(d);
    let a = DMatrix::from_row_slice(n, d, x.as_slice());
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let sigma = svd.singular_values;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(k_eff);
    let mut values = Vec::with_capacity(k_eff);
    for &idx in order.iter().take(k_eff) {
        let mut v: Vec<f64> = v_t.row(idx).iter().copied().collect();
        orient(&mut v);
        vectors.push(v);
        values.push(sigma[idx].max(0.0));
    }
    reorthonormalize(&mut vectors);

    let mut components = FeatureMatrix::zeros(d, k_eff);
    for (c, v) in vectors.iter().enumerate() {
        for (j, value) in v.iter().enumerate() {
            components.row_mut(j)[c] = *value;
        }
    }
    Ok(SvdTransform {
        components,
        singular_values: values,
    })
}

fn orient(v: &mut [f64]) {
    let mut pivot = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

// Vectors belonging to zero singular values are not guaranteed orthonormal;
// replace any that collapsed with a completed basis vector.
fn reorthonormalize(vectors: &mut [Vec<f64>]) {
    let dim = vectors.first().map_or(0, Vec::len);
    for i in 0..vectors.len() {
        let ok = (dot(&vectors[i], &vectors[i]) - 1.0).abs() < 1e-10
            && (0..i).all(|j| dot(&vectors[i], &vectors[j]).abs() < 1e-10);
        if ok {
            continue;
        }
        let mut candidates = std::iter::once(vectors[i].clone()).chain((0..dim).map(|e| {
            let mut basis = vec![0.0; dim];
            basis[e] = 1.0;
            basis
        }));
        let replacement = loop {
            let mut v = match candidates.next() {
                Some(v) => v,
                None => break None,
            };
            for j in 0..i {
                let proj = dot(&v, &vectors[j]);
                v.iter_mut().zip(&vectors[j]).for_each(|(a, b)| *a -= proj * b);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|a| *a /= norm);
                orient(&mut v);
                break Some(v);
            }
        };
        if let Some(v) = replacement {
            vectors[i] = v;
        }
    }
}

/// Projects rows of `x` onto the fitted components.
pub fn apply_svd(t: &SvdTransform, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    if x.n_cols() != t.input_dim() {
        return Err(FeatureError::DimensionMismatch {
            expected: t.input_dim(),
            found: x.n_cols(),
        });
    }
    let k = t.output_dim();
    let mut out = FeatureMatrix::zeros(x.n_rows(), k);
    for (i, row) in x.rows().enumerate() {
        let target = out.row_mut(i);
        for (j, &value) in row.iter().enumerate() {
            if value != 0.0 {
                let comp = t.components.row(j);
                target.iter_mut().zip(comp).for_each(|(o, c)| *o += value * c);
            }
        }
    }
    Ok(out)
}
