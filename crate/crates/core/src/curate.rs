//! Diversity curation over per-artifact embeddings.
//!
//! Per-view features are averaged into one vector per artifact, the corpus
//! is partitioned with k-means (k-means++ seeding, Lloyd iterations), and
//! the member nearest each centroid is kept as the cluster's exemplar.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, dist_sq_slice};

pub const DEFAULT_VIEW_COUNT: usize = 8;
pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum CurateError {
    #[error("no vectors given")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite entry in vector {0}")]
    NonFinite(usize),
    #[error("requested {k} clusters/neighbours but only {n} vectors")]
    TooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub artifact_id: String,
    pub vector: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(artifact_id: impl Into<String>, vector: Vec<f64>) -> Self {
        Self { artifact_id: artifact_id.into(), vector }
    }
}

fn check_uniform<V: AsRef<[f64]>>(vectors: &[V]) -> Result<usize, CurateError> {
    let first = vectors.first().ok_or(CurateError::Empty)?;
    let d = first.as_ref().len();
    for (i, v) in vectors.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != d {
            return Err(CurateError::Dimension { expected: d, got: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CurateError::NonFinite(i));
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedViews {
    pub vector: Vec<f64>,
    pub views: usize,
    /// The number of views differed from the expected count.
    pub view_count_mismatch: bool,
}

/// Component-wise mean of the per-view embeddings.
pub fn average_view_embeddings<V: AsRef<[f64]>>(views: &[V], expected_views: usize) -> Result<AveragedViews, CurateError> {
    let d = check_uniform(views)?;
    let mut sum = alloc::vec![0.0; d];
    for v in views {
        for (s, x) in sum.iter_mut().zip(v.as_ref()) {
            *s += x;
        }
    }
    let n = views.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(AveragedViews { vector: sum, views: views.len(), view_count_mismatch: views.len() != expected_views })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Artifact ids in input order.
    pub ids: Vec<String>,
    /// Cluster index per input vector, aligned with `ids`.
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterModel {
    pub fn assignments(&self) -> BTreeMap<&str, usize> {
        self.ids.iter().map(String::as_str).zip(self.labels.iter().copied()).collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

fn nearest_centroid(v: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist_sq_slice(v, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

#[cfg(feature = "parallel")]
fn assign(vectors: &[EmbeddingVector], centroids: &[Vec<f64>], parallel: bool) -> Vec<usize> {
    use rayon::prelude::*;
    if parallel {
        return vectors.par_iter().map(|e| nearest_centroid(&e.vector, centroids)).collect();
    }
    vectors.iter().map(|e| nearest_centroid(&e.vector, centroids)).collect()
}

#[cfg(not(feature = "parallel"))]
fn assign(vectors: &[EmbeddingVector], centroids: &[Vec<f64>], _parallel: bool) -> Vec<usize> {
    vectors.iter().map(|e| nearest_centroid(&e.vector, centroids)).collect()
}

fn kmeans_plus_plus(vectors: &[EmbeddingVector], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut chosen = alloc::vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = alloc::vec![vectors[first].vector.clone()];
    let mut min_d: Vec<f64> = vectors.iter().map(|e| dist_sq_slice(&e.vector, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in min_d.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just above the final sum.
            pick.unwrap_or_else(|| min_d.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = vectors[pick].vector.clone();
        for (m, e) in min_d.iter_mut().zip(vectors) {
            *m = m.min(dist_sq_slice(&e.vector, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Reassigns, for each empty cluster, the point farthest from its own
/// centroid (taken from a cluster with more than one member).
fn repair_empty(vectors: &[EmbeddingVector], centroids: &mut [Vec<f64>], labels: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = alloc::vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let mut far = (usize::MAX, -1.0);
        for (i, e) in vectors.iter().enumerate() {
            if sizes[labels[i]] > 1 {
                let d = dist_sq_slice(&e.vector, &centroids[labels[i]]);
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        let (i, _) = far;
        labels[i] = empty;
        centroids[empty] = vectors[i].vector.clone();
    }
}

fn update_centroids(vectors: &[EmbeddingVector], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = alloc::vec![alloc::vec![0.0; dim]; k];
    let mut counts = alloc::vec![0usize; k];
    for (e, &l) in vectors.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(&e.vector) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= c as f64);
    }
    sums
}

fn inertia(vectors: &[EmbeddingVector], centroids: &[Vec<f64>], labels: &[usize]) -> f64 {
    vectors.iter().zip(labels).map(|(e, &l)| dist_sq_slice(&e.vector, &centroids[l])).sum()
}

/// k-means with k-means++ seeding and Lloyd iterations until the assignment
/// stops changing or `max_iters` is reached.
pub fn kmeans_cluster(vectors: &[EmbeddingVector], k: usize, max_iters: usize, seed: u64) -> Result<ClusterModel, CurateError> {
    kmeans_cluster_with(vectors, k, max_iters, seed, false)
}

/// As [`kmeans_cluster`]; `parallel` runs the assignment step on the rayon
/// pool when the `parallel` feature is enabled. Results are identical.
pub fn kmeans_cluster_with(
    vectors: &[EmbeddingVector],
    k: usize,
    max_iters: usize,
    seed: u64,
    parallel: bool,
) -> Result<ClusterModel, CurateError> {
    if k == 0 {
        return Err(CurateError::ZeroK);
    }
    let vecs: Vec<&[f64]> = vectors.iter().map(|e| e.vector.as_slice()).collect();
    let dim = check_uniform(&vecs)?;
    if k > vectors.len() {
        return Err(CurateError::TooLarge { k, n: vectors.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(vectors, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters.max(1) {
        iterations += 1;
        let mut next = assign(vectors, &centroids, parallel);
        repair_empty(vectors, &mut centroids, &mut next);
        centroids = update_centroids(vectors, &next, k, dim);
        history.push(inertia(vectors, &centroids, &next));
        let stable = next == labels;
        labels = next;
        if stable {
            converged = true;
            break;
        }
    }
    Ok(ClusterModel {
        k,
        centroids,
        ids: vectors.iter().map(|e| e.artifact_id.clone()).collect(),
        inertia: *history.last().expect("at least one iteration"),
        labels,
        inertia_history: history,
        iterations,
        converged,
    })
}

/// One id per nonempty cluster, in cluster order: the member nearest the
/// centroid, ties to the lexicographically smallest id.
pub fn select_exemplars(model: &ClusterModel, vectors: &[EmbeddingVector]) -> Vec<String> {
    let mut best: Vec<Option<(f64, &str)>> = alloc::vec![None; model.k];
    for (e, &l) in vectors.iter().zip(&model.labels) {
        let d = dist_sq_slice(&e.vector, &model.centroids[l]);
        let better = match best[l] {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && e.artifact_id.as_str() < bid),
        };
        if better {
            best[l] = Some((d, e.artifact_id.as_str()));
        }
    }
    best.into_iter().flatten().map(|(_, id)| String::from(id)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub artifact_id: String,
    pub distance: f64,
}

/// Exact Euclidean top-`k`, ascending by distance then id.
pub fn nearest_neighbors(query: &[f64], vectors: &[EmbeddingVector], k: usize) -> Result<Vec<Neighbor>, CurateError> {
    if k > vectors.len() {
        return Err(CurateError::TooLarge { k, n: vectors.len() });
    }
    let mut all: Vec<(f64, &str)> = Vec::with_capacity(vectors.len());
    for e in vectors {
        if e.vector.len() != query.len() {
            return Err(CurateError::Dimension { expected: query.len(), got: e.vector.len() });
        }
        all.push((dist_sq_slice(query, &e.vector), e.artifact_id.as_str()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(all
        .into_iter()
        .take(k)
        .map(|(d, id)| Neighbor { artifact_id: id.into(), distance: math::sqrt(d) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn ev(id: &str, v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(id, v.to_vec())
    }

    fn two_blobs() -> Vec<EmbeddingVector> {
        vec![
            ev("a0", &[0.0, 0.0]),
            ev("a1", &[0.1, 0.0]),
            ev("a2", &[0.0, -0.1]),
            ev("b0", &[10.0, 10.0]),
            ev("b1", &[10.1, 10.1]),
            ev("b2", &[9.9, 10.0]),
        ]
    }

    #[test]
    fn averaging() {
        let v = [1.0, 2.0];
        let r = average_view_embeddings(&[v; 8], 8).unwrap();
        assert_eq!(r.vector, vec![1.0, 2.0]);
        assert!(!r.view_count_mismatch);
        let mut views = vec![vec![1.0, 0.0]; 4];
        views.extend(vec![vec![0.0, 1.0]; 4]);
        assert_eq!(average_view_embeddings(&views, 8).unwrap().vector, vec![0.5, 0.5]);
        let r = average_view_embeddings(&views[..7], 8).unwrap();
        assert!(r.view_count_mismatch);
        assert_eq!(r.views, 7);
        assert_eq!(r.vector, vec![4.0 / 7.0, 3.0 / 7.0]);
        assert_eq!(
            average_view_embeddings(&[vec![1.0], vec![1.0, 2.0]], 8),
            Err(CurateError::Dimension { expected: 1, got: 2 })
        );
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let pts: Vec<EmbeddingVector> = (0..7).map(|i| ev(&format!("p{i}"), &[i as f64, (i * i) as f64])).collect();
        let m = kmeans_cluster(&pts, 7, 100, 3).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut sizes = m.cluster_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![1; 7]);
    }

    #[test]
    fn two_blobs_recover_means_and_exemplars() {
        // Blob means: (0.0333, -0.0333) and (10.0, 10.0333). Distances to the
        // first mean: a0 0.0471, a1 0.0745, a2 0.0745 -> a0. To the second:
        // b0 0.0333, b1 0.1202, b2 0.1054 -> b0.
        let pts = two_blobs();
        for seed in 0..10 {
            let m = kmeans_cluster(&pts, 2, 100, seed).unwrap();
            assert!(m.converged);
            let mut cents = m.centroids.clone();
            cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert!(dist_sq_slice(&cents[0], &[0.1 / 3.0, -0.1 / 3.0]) < 1e-20);
            assert!(dist_sq_slice(&cents[1], &[10.0, 10.1 / 3.0 + 20.0 / 3.0]) < 1e-20);
            let mut ex = select_exemplars(&m, &pts);
            ex.sort();
            assert_eq!(ex, vec!["a0", "b0"]);
        }
    }

    #[test]
    fn too_many_clusters() {
        assert_eq!(kmeans_cluster(&two_blobs(), 7, 10, 0).unwrap_err(), CurateError::TooLarge { k: 7, n: 6 });
        assert_eq!(kmeans_cluster(&[], 1, 10, 0).unwrap_err(), CurateError::Empty);
        assert_eq!(kmeans_cluster(&two_blobs(), 0, 10, 0).unwrap_err(), CurateError::ZeroK);
    }

    #[test]
    fn duplicate_points_still_fill_k_clusters() {
        let pts: Vec<EmbeddingVector> = (0..5).map(|i| ev(&format!("d{i}"), &[1.0, 1.0])).collect();
        let m = kmeans_cluster(&pts, 3, 10, 1).unwrap();
        assert!(m.cluster_sizes().iter().all(|&s| s >= 1));
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn exemplar_tie_prefers_smaller_id() {
        let pts = vec![ev("z", &[1.0]), ev("m", &[-1.0])];
        let m = ClusterModel {
            k: 1,
            centroids: vec![vec![0.0]],
            ids: vec!["z".into(), "m".into()],
            labels: vec![0, 0],
            inertia: 2.0,
            inertia_history: vec![2.0],
            iterations: 1,
            converged: true,
        };
        assert_eq!(select_exemplars(&m, &pts), vec!["m"]);
    }

    #[test]
    fn neighbors_1d_hand_order() {
        // Query 2.2 over {0, 1, 2, 3, 5}: distances 2.2, 1.2, 0.2, 0.8, 2.8.
        let pts: Vec<EmbeddingVector> = [0.0, 1.0, 2.0, 3.0, 5.0].iter().enumerate().map(|(i, &x)| ev(&format!("n{i}"), &[x])).collect();
        let ids: Vec<String> = nearest_neighbors(&[2.2], &pts, 5).unwrap().into_iter().map(|n| n.artifact_id).collect();
        assert_eq!(ids, vec!["n2", "n3", "n1", "n0", "n4"]);
        let exact = nearest_neighbors(&[3.0], &pts, 1).unwrap();
        assert_eq!(exact, vec![Neighbor { artifact_id: "n3".into(), distance: 0.0 }]);
        assert!(nearest_neighbors(&[0.0], &pts, 6).is_err());
    }
}
