//! K-Means clustering, elbow-based choice of K and silhouette scoring.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dimred::Embedding;
use crate::error::{invalid, Result};
use crate::util::{derive_seed, rng, squared_distance};

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_ITERATIONS: usize = 300;
pub const SHIFT_TOL: f64 = 1e-6;

/// Elbow chord distances closer than this count as ties.
const ELBOW_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster per sample, renumbered by first appearance.
    pub labels: Vec<usize>,
    /// K x d
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
    pub k: usize,
    pub seed: u64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub inertia_trace: Vec<f64>,
}

/// Points in row-major storage.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    pub data: &'a [f64],
    pub n: usize,
    pub d: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], n: usize, d: usize) -> Self {
        assert_eq!(data.len(), n * d);
        Points { data, n, d }
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

fn kmeans_plus_plus(points: Points, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut g = rng(seed);
    let mut chosen = vec![false; points.n];
    let first = g.random_range(0..points.n);
    chosen[first] = true;
    let mut centers = vec![points.row(first).to_vec()];
    let mut closest: Vec<f64> = (0..points.n).map(|i| squared_distance(points.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let mut target = g.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in closest.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // rounding can run past the end; fall back to the last positive weight
            pick.unwrap_or_else(|| closest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            (0..points.n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[next] = true;
        let c = points.row(next).to_vec();
        for (i, slot) in closest.iter_mut().enumerate() {
            *slot = slot.min(squared_distance(points.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

fn assign(points: Points, centers: &[Vec<f64>]) -> Vec<usize> {
    (0..points.n)
        .map(|i| {
            let x = points.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = squared_distance(x, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn means(points: Points, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; points.d]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: Points, labels: &mut [usize], centers: &mut [Vec<f64>]) {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for i in 0..points.n {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = squared_distance(points.row(i), &centers[labels[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        labels[i] = empty;
        centers[empty] = points.row(i).to_vec();
    }
}

pub fn inertia_of(points: Points, labels: &[usize], centers: &[Vec<f64>]) -> f64 {
    (0..points.n).map(|i| squared_distance(points.row(i), &centers[labels[i]])).sum()
}

/// Lloyd iterations from the given centers. Returns (labels, centers, trace).
pub fn lloyd(points: Points, init: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let k = init.len();
    let mut centers = init;
    let mut labels = vec![0; points.n];
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        labels = assign(points, &centers);
        repair_empty(points, &mut labels, &mut centers);
        let updated = means(points, &labels, k);
        trace.push(inertia_of(points, &labels, &updated));
        let shift = centers
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = updated;
        if shift < SHIFT_TOL {
            break;
        }
    }
    (labels, centers, trace)
}

/// Renumbers clusters by ascending index of their first member.
fn canonicalize(labels: &[usize], centers: &[Vec<f64>]) -> (Vec<usize>, Vec<Vec<f64>>) {
    let k = centers.len();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &l in labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    let mut new_centers = vec![Vec::new(); k];
    for (old, &new) in map.iter().enumerate() {
        if new != usize::MAX {
            new_centers[new] = centers[old].clone();
        }
    }
    (labels.iter().map(|&l| map[l]).collect(), new_centers)
}

/// Best-of-`restarts` k-means++ / Lloyd clustering of raw points.
pub fn kmeans(points: Points, k: usize, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    if k < 1 || k > points.n {
        return Err(invalid!("K must lie in [1, {}] (number of samples), got {k}", points.n));
    }
    if restarts < 1 {
        return Err(invalid!("restarts must be at least 1"));
    }
    let runs: Vec<(Vec<usize>, Vec<Vec<f64>>, Vec<f64>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let init = kmeans_plus_plus(points, k, derive_seed(seed, &[r as u64]));
            lloyd(points, init)
        })
        .collect();
    let mut best = 0;
    for r in 1..restarts {
        let cur = runs[r].2.last().copied().unwrap_or(f64::INFINITY);
        let top = runs[best].2.last().copied().unwrap_or(f64::INFINITY);
        if cur < top {
            best = r;
        }
    }
    let (labels, centers, trace) = runs.into_iter().nth(best).unwrap();
    let (labels, centers) = canonicalize(&labels, &centers);
    let inertia = inertia_of(points, &labels, &centers);
    let mut centroids = DMatrix::zeros(k, points.d);
    for (c, center) in centers.iter().enumerate() {
        for (j, v) in center.iter().enumerate() {
            centroids[(c, j)] = *v;
        }
    }
    Ok(ClusterAssignment {
        labels,
        centroids,
        inertia,
        k,
        seed,
        inertia_trace: trace,
    })
}

/// K-Means on embedding coordinates.
pub fn fit_kmeans(embedding: &Embedding, k: usize, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    let data = embedding.row_major();
    kmeans(Points::new(&data, embedding.n_samples(), embedding.dim()), k, seed, restarts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    pub k_values: Vec<usize>,
    pub inertias: Vec<f64>,
    /// Distance of each normalized point to the chord between the endpoints.
    pub chord_distances: Vec<f64>,
    pub chosen_k: usize,
}

/// Picks the K whose min-max normalized (K, inertia) point lies farthest from
/// the chord joining the curve's endpoints; ties go to the smallest K.
pub fn elbow_from_curve(k_values: &[usize], inertias: &[f64]) -> Result<ElbowCurve> {
    if k_values.len() < 3 || k_values.len() != inertias.len() {
        return Err(invalid!("the elbow method needs at least 3 K values"));
    }
    if k_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid!("K values must be strictly ascending"));
    }
    let (k0, k1) = (k_values[0] as f64, *k_values.last().unwrap() as f64);
    let (lo, hi) = inertias
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let xs: Vec<f64> = k_values.iter().map(|&k| (k as f64 - k0) / (k1 - k0)).collect();
    let ys: Vec<f64> = inertias
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect();
    let last = xs.len() - 1;
    let (dx, dy) = (xs[last] - xs[0], ys[last] - ys[0]);
    let len = (dx * dx + dy * dy).sqrt();
    let distances: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| ((x - xs[0]) * dy - (y - ys[0]) * dx).abs() / len)
        .collect();
    let mut best = 0;
    for i in 1..distances.len() {
        if distances[i] > distances[best] + ELBOW_TIE_TOL {
            best = i;
        }
    }
    Ok(ElbowCurve {
        k_values: k_values.to_vec(),
        inertias: inertias.to_vec(),
        chord_distances: distances,
        chosen_k: k_values[best],
    })
}

/// Fits K-Means for each K and applies [`elbow_from_curve`].
pub fn optimal_k_elbow(embedding: &Embedding, k_values: &[usize], seed: u64) -> Result<ElbowCurve> {
    if k_values.len() < 3 {
        return Err(invalid!("the elbow method needs at least 3 K values, got {}", k_values.len()));
    }
    let inertias = k_values
        .iter()
        .map(|&k| fit_kmeans(embedding, k, seed, DEFAULT_RESTARTS).map(|a| a.inertia))
        .collect::<Result<Vec<_>>>()?;
    elbow_from_curve(k_values, &inertias)
}

/// Mean silhouette of raw points under `labels`.
pub fn silhouette(points: Points, labels: &[usize]) -> Result<f64> {
    let n = points.n;
    if labels.len() != n {
        return Err(invalid!("{} labels for {n} points", labels.len()));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(invalid!("silhouette needs at least 2 clusters"));
    }
    if ids.len() > n - 1 {
        return Err(invalid!("silhouette needs at most samples - 1 clusters"));
    }
    let slot: std::collections::HashMap<usize, usize> = ids.iter().enumerate().map(|(s, &l)| (l, s)).collect();
    let dense: Vec<usize> = labels.iter().map(|l| slot[l]).collect();
    let k = ids.len();
    let mut sizes = vec![0usize; k];
    for &c in &dense {
        sizes[c] += 1;
    }

    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = dense[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            let xi = points.row(i);
            for j in 0..n {
                if j != i {
                    sums[dense[j]] += squared_distance(xi, points.row(j)).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

pub fn silhouette_score(embedding: &Embedding, labels: &[usize]) -> Result<f64> {
    let data = embedding.row_major();
    silhouette(Points::new(&data, embedding.n_samples(), embedding.dim()), labels)
}
