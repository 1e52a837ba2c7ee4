//! K-Means (Lloyd) used as a classifier: clusters are mapped to the
//! majority training label of their members.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelError, Result, N_CLASSES};
use crate::features::matrix::squared_distance;
use crate::features::FeatureMatrix;
use crate::labeling::SentimentClass;

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: FeatureMatrix,
    pub assignments: Vec<usize>,
    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("at least the initial inertia")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centroids: FeatureMatrix,
    pub cluster_class: Vec<SentimentClass>,
}

impl KMeansModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<SentimentClass> {
        x.rows()
            .map(|r| self.cluster_class[nearest(&self.centroids, r).0])
            .collect()
    }
}

/// Nearest centroid (lowest index on ties) and its squared distance.
fn nearest(centroids: &FeatureMatrix, row: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.rows().enumerate() {
        let d = squared_distance(centroid, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Greedy farthest-point seeding: a seeded uniform first pick, then
/// repeatedly the row farthest from every chosen center.
fn farthest_point_init(x: &FeatureMatrix, k: usize, seed: u64) -> Vec<usize> {
    let n = x.n_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);
    let mut chosen = vec![first];
    let mut min_dist: Vec<f64> = x.rows().map(|r| squared_distance(r, x.row(first))).collect();
    while chosen.len() < k {
        let mut next = 0;
        for i in 1..n {
            if min_dist[i] > min_dist[next] {
                next = i;
            }
        }
        chosen.push(next);
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min(squared_distance(x.row(i), x.row(next)));
        }
    }
    chosen
}

fn assign(x: &FeatureMatrix, centroids: &FeatureMatrix) -> (Vec<usize>, Vec<f64>) {
    x.rows().map(|r| nearest(centroids, r)).unzip()
}

/// Lloyd's algorithm until assignments stop changing or the iteration cap.
pub fn lloyd(x: &FeatureMatrix, k: usize, seed: u64) -> Result<Clustering> {
    let (n, d) = (x.n_rows(), x.n_cols());
    if k == 0 || k > n {
        return Err(ModelError::TooManyClusters {
            n_clusters: k,
            n_rows: n,
        });
    }
    let mut centroids = x.select_rows(&farthest_point_init(x, k, seed));
    let (mut assignments, mut distances) = assign(x, &centroids);
    let mut inertia_history = vec![distances.iter().sum()];
    let mut iterations = 0;

    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        // Empty clusters take the row farthest from its own centroid,
        // drawn from clusters that keep at least one member.
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| sizes[assignments[i]] > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if distances[b] >= distances[i] => Some(b),
                    _ => Some(i),
                });
            if let Some(i) = donor {
                sizes[assignments[i]] -= 1;
                sizes[empty] = 1;
                assignments[i] = empty;
                distances[i] = 0.0;
                centroids.row_mut(empty).copy_from_slice(x.row(i));
            }
        }
        let mut sums = vec![0.0; k * d];
        for (row, &a) in x.rows().zip(&assignments) {
            sums[a * d..(a + 1) * d].iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if sizes[c] == 0 {
                continue;
            }
            let count = sizes[c] as f64;
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                *dst = s / count;
            }
        }
        let (next, next_distances) = assign(x, &centroids);
        inertia_history.push(next_distances.iter().sum());
        let stable = next == assignments;
        assignments = next;
        distances = next_distances;
        if stable {
            break;
        }
    }
    Ok(Clustering {
        centroids,
        assignments,
        inertia_history,
        iterations,
    })
}

/// Majority label per cluster; ties go to Neutral when it is among the
/// leaders, otherwise to the lower class index. Empty clusters map to Neutral.
pub fn majority_map(assignments: &[usize], y: &[SentimentClass], k: usize) -> Vec<SentimentClass> {
    let mut counts = vec![[0usize; N_CLASSES]; k];
    for (&a, label) in assignments.iter().zip(y) {
        counts[a][label.index()] += 1;
    }
    counts
        .iter()
        .map(|c| {
            let top = *c.iter().max().expect("three classes");
            if c[SentimentClass::Neutral.index()] == top {
                SentimentClass::Neutral
            } else {
                let idx = c.iter().position(|&v| v == top).expect("max exists");
                SentimentClass::from_index(idx).expect("class index in range")
            }
        })
        .collect()
}

pub fn train_kmeans_classifier(x: &FeatureMatrix, y: &[SentimentClass], n_clusters: usize, seed: u64) -> Result<KMeansModel> {
    if x.n_rows() != y.len() {
        return Err(ModelError::LengthMismatch {
            labels: y.len(),
            rows: x.n_rows(),
        });
    }
    let clustering = lloyd(x, n_clusters, seed)?;
    let cluster_class = majority_map(&clustering.assignments, y, n_clusters);
    Ok(KMeansModel {
        centroids: clustering.centroids,
        cluster_class,
    })
}
