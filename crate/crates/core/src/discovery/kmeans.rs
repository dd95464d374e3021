//! Spherical k-means: Lloyd iterations over L2-normalized vectors with
//! unit-length centroids, k-means++ seeding, and empty-cluster repair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vector::{dot, normalized, normalized_mean, squared_distance};
use crate::error::{Error, Result};

/// Number of nearest-to-centroid members kept for display.
pub const EXEMPLARS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterView {
    pub cluster_id: String,
    pub members: Vec<String>,
    pub centroid: Vec<f64>,
    pub iteration: u32,
    pub exemplar_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub clusters: Vec<ClusterView>,
    /// Index into `clusters` for every input point.
    pub labels: Vec<usize>,
    /// Inertia after every assignment, update and repair phase.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
}

/// Default cluster count for `n` points: `ceil(sqrt(n / 2))`.
pub fn default_k(n: usize) -> usize {
    ((n as f64 / 2.0).sqrt().ceil() as usize).max(1)
}

/// Clusters `vectors` (labelled by `ids`) into `params.k` groups.
/// `round` only tags the returned views.
pub fn kmeans(
    ids: &[String],
    vectors: &[Vec<f64>],
    params: KMeansParams,
    round: u32,
) -> Result<KMeansResult> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::InvalidArgument("k-means over an empty vector set".into()));
    }
    if ids.len() != n {
        return Err(Error::InvalidArgument("ids and vectors differ in length".into()));
    }
    let dims = vectors[0].len();
    if dims == 0 || vectors.iter().any(|v| v.len() != dims) {
        return Err(Error::InvalidArgument(
            "vectors must share one non-zero length".into(),
        ));
    }
    if params.k == 0 || params.k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {} must be in 1..={n}",
            params.k
        )));
    }

    let points: Vec<Vec<f64>> = vectors.iter().map(|v| normalized(v)).collect();
    let mut state = Lloyd {
        points: &points,
        dims,
        centroids: seed_plus_plus(&points, params.k, params.seed),
        labels: vec![0; n],
        history: Vec::new(),
    };

    state.assign();
    state.repair();
    state.record();
    let mut iterations = 0;
    while iterations < params.max_iters {
        iterations += 1;
        state.update();
        state.record();
        let before = state.labels.clone();
        state.assign();
        state.repair();
        state.record();
        if state.labels == before {
            break;
        }
    }

    let clusters = state.views(ids, round);
    Ok(KMeansResult {
        clusters,
        labels: state.labels,
        inertia_history: state.history,
        iterations,
    })
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[first]))
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                if target < *w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // rounding can run past the end; take the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).expect("positive total"))
        } else {
            chosen.iter().position(|c| !c).expect("k <= n")
        };
        chosen[pick] = true;
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, &points[pick]));
        }
        d2[pick] = 0.0;
        centroids.push(points[pick].clone());
    }
    centroids
}

struct Lloyd<'a> {
    points: &'a [Vec<f64>],
    dims: usize,
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    history: Vec<f64>,
}

impl Lloyd<'_> {
    fn nearest(&self, p: &[f64]) -> usize {
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (c, centroid) in self.centroids.iter().enumerate() {
            let sim = dot(p, centroid);
            if sim > best_sim {
                best = c;
                best_sim = sim;
            }
        }
        best
    }

    fn assign(&mut self) {
        let labels: Vec<usize> = self.points.iter().map(|p| self.nearest(p)).collect();
        self.labels = labels;
    }

    fn centroid_of(&self, cluster: usize) -> Option<Vec<f64>> {
        normalized_mean(
            self.points
                .iter()
                .zip(&self.labels)
                .filter(|(_, l)| **l == cluster)
                .map(|(p, _)| p.as_slice()),
            self.dims,
        )
    }

    fn update(&mut self) {
        for c in 0..self.centroids.len() {
            // a zero-sum cluster keeps its centroid: every unit vector costs the same
            if let Some(next) = self.centroid_of(c) {
                self.centroids[c] = next;
            }
        }
        self.repair();
    }

    fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for l in &self.labels {
            sizes[*l] += 1;
        }
        sizes
    }

    /// Moves the worst-fitting member of the largest cluster into each empty
    /// cluster, centring the empty cluster on it.
    fn repair(&mut self) {
        loop {
            let sizes = self.sizes();
            let Some(empty) = sizes.iter().position(|s| *s == 0) else {
                return;
            };
            let largest = (0..sizes.len())
                .max_by(|a, b| sizes[*a].cmp(&sizes[*b]).then(b.cmp(a)))
                .expect("k >= 1");
            let centroid = &self.centroids[largest];
            let worst = self
                .labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == largest)
                .map(|(i, _)| i)
                .min_by(|a, b| {
                    dot(&self.points[*a], centroid)
                        .total_cmp(&dot(&self.points[*b], centroid))
                        .then(a.cmp(b))
                })
                .expect("largest cluster has members");
            self.labels[worst] = empty;
            self.centroids[empty] = self.points[worst].clone();
            if let Some(c) = self.centroid_of(largest) {
                self.centroids[largest] = c;
            }
        }
    }

    fn inertia(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.labels)
            .map(|(p, l)| squared_distance(p, &self.centroids[*l]))
            .sum()
    }

    fn record(&mut self) {
        let v = self.inertia();
        self.history.push(v);
    }

    fn views(&self, ids: &[String], round: u32) -> Vec<ClusterView> {
        (0..self.centroids.len())
            .map(|c| {
                let centroid = &self.centroids[c];
                let mut members: Vec<(usize, f64)> = self
                    .labels
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| **l == c)
                    .map(|(i, _)| (i, dot(&self.points[i], centroid)))
                    .collect();
                let member_ids = members.iter().map(|(i, _)| ids[*i].clone()).collect();
                members.sort_by(|a, b| b.1.total_cmp(&a.1).then(ids[a.0].cmp(&ids[b.0])));
                ClusterView {
                    cluster_id: format!("r{round}-c{c}"),
                    members: member_ids,
                    centroid: centroid.clone(),
                    iteration: round,
                    exemplar_ids: members
                        .iter()
                        .take(EXEMPLARS)
                        .map(|(i, _)| ids[*i].clone())
                        .collect(),
                }
            })
            .collect()
    }
}
