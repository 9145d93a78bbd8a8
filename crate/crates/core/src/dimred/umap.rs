//! UMAP: fuzzy k-NN graph construction and negative-sampling layout
//! optimization.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spectral::spectral_layout;
use super::{Diagnostics, Embedding, Method};
use crate::corpus::FeatureMatrix;
use crate::error::{invalid, Result};
use crate::util::{derive_seed, rng, row_major};

const SMOOTH_KNN_TOL: f64 = 1e-5;
const SMOOTH_KNN_STEPS: usize = 64;
const GRAD_CLIP: f64 = 4.0;
const INIT_NOISE: f64 = 1e-4;
const INIT_EXTENT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UmapParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_components: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub repulsion_strength: f64,
    pub seed: u64,
}

impl Default for UmapParams {
    fn default() -> Self {
        UmapParams {
            n_neighbors: 50,
            min_dist: 0.1,
            spread: 1.0,
            n_components: 2,
            epochs: 500,
            learning_rate: 1.0,
            negative_sample_rate: 5,
            repulsion_strength: 1.0,
            seed: 0,
        }
    }
}

/// Symmetric fuzzy membership graph. `edges` holds both (i, j) and (j, i).
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl FuzzyGraph {
    pub fn max_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).fold(0.0, f64::max)
    }
}

/// Exact k nearest neighbors (self excluded) by Euclidean distance, ties
/// broken by index. Returns (indices, distances), each n x k row-major.
pub fn exact_knn(data: &[f64], n: usize, d: usize, k: usize) -> (Vec<usize>, Vec<f64>) {
    let rows: Vec<Vec<(f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &data[i * d..(i + 1) * d];
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let xj = &data[j * d..(j + 1) * d];
                    let d2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2.sqrt(), j)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all.truncate(k);
            all
        })
        .collect();
    let mut idx = Vec::with_capacity(n * k);
    let mut dist = Vec::with_capacity(n * k);
    for row in rows {
        for (dd, j) in row {
            idx.push(j);
            dist.push(dd);
        }
    }
    (idx, dist)
}

/// Per-point (sigma, rho): rho is the nearest-neighbor distance and sigma
/// solves `sum_j exp(-max(0, d_j - rho) / sigma) = log2(n_neighbors)` over the
/// `n_neighbors - 1` non-self neighbors.
pub fn smooth_knn(knn_dists: &[f64], n: usize, k: usize, n_neighbors: usize) -> (Vec<f64>, Vec<f64>) {
    let target = (n_neighbors as f64).log2();
    let mut sigmas = Vec::with_capacity(n);
    let mut rhos = Vec::with_capacity(n);
    for i in 0..n {
        let row = &knn_dists[i * k..(i + 1) * k];
        let rho = row.iter().copied().find(|&v| v > 0.0).unwrap_or(0.0);
        let psum = |sigma: f64| -> f64 {
            row.iter()
                .map(|&d| {
                    let x = d - rho;
                    if x > 0.0 {
                        (-x / sigma).exp()
                    } else {
                        1.0
                    }
                })
                .sum()
        };
        let mut lo = 0.0;
        let mut hi = f64::INFINITY;
        let mut mid = 1.0;
        for _ in 0..SMOOTH_KNN_STEPS {
            let s = psum(mid);
            if (s - target).abs() < SMOOTH_KNN_TOL {
                break;
            }
            if s > target {
                hi = mid;
                mid = (lo + hi) / 2.0;
            } else {
                lo = mid;
                mid = if hi.is_finite() { (lo + hi) / 2.0 } else { mid * 2.0 };
            }
        }
        sigmas.push(mid);
        rhos.push(rho);
    }
    (sigmas, rhos)
}

/// Directed membership strengths combined by fuzzy union `a + b - ab`.
pub fn fuzzy_simplicial_set(data: &[f64], n: usize, d: usize, n_neighbors: usize) -> (FuzzyGraph, Vec<f64>, Vec<f64>) {
    let k = n_neighbors - 1;
    let (idx, dist) = exact_knn(data, n, d, k);
    let (sigmas, rhos) = smooth_knn(&dist, n, k, n_neighbors);

    let mut directed: HashMap<(usize, usize), f64> = HashMap::new();
    for i in 0..n {
        for t in 0..k {
            let j = idx[i * k + t];
            let x = dist[i * k + t] - rhos[i];
            let w = if x <= 0.0 { 1.0 } else { (-x / sigmas[i]).exp() };
            directed.insert((i, j), w);
        }
    }
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(i, j), &w) in &directed {
        let wt = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let u = w + wt - w * wt;
        sym.insert((i, j), u);
        sym.insert((j, i), u);
    }
    let edges = sym.into_iter().filter(|&(_, w)| w > 0.0).map(|((i, j), w)| (i, j, w)).collect();
    (FuzzyGraph { n, edges }, sigmas, rhos)
}

/// Least-squares fit of `1 / (1 + a d^(2b))` to the target membership curve
/// (1 below `min_dist`, exponential decay with scale `spread` above) on 300
/// points of [0, 3 * spread]. Levenberg-Marquardt from (1, 1).
pub fn find_ab_params(spread: f64, min_dist: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();

    let sse = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
                r * r
            })
            .sum()
    };
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut lambda = 1e-3;
    let mut cost = sse(a, b);
    for _ in 0..500 {
        // normal equations J^T J and J^T r
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x == 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let f = 1.0 / (1.0 + a * p);
            let r = f - y;
            let dfa = -p * f * f;
            let dfb = -a * p * 2.0 * x.ln() * f * f;
            jaa += dfa * dfa;
            jab += dfa * dfb;
            jbb += dfb * dfb;
            ga += dfa * r;
            gb += dfb * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let (m11, m22) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = m11 * m22 - jab * jab;
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let da = -(m22 * ga - jab * gb) / det;
            let db = -(m11 * gb - jab * ga) / det;
            let (na, nb) = (a + da, b + db);
            if na > 0.0 && nb > 0.0 {
                let c = sse(na, nb);
                if c < cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    a = na;
                    b = nb;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = rel > 1e-15;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

/// Min-max rescales each column into [0, INIT_EXTENT].
fn rescale_columns(y: &mut [f64], n: usize, dim: usize) {
    for k in 0..dim {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            lo = lo.min(y[i * dim + k]);
            hi = hi.max(y[i * dim + k]);
        }
        let span = hi - lo;
        for i in 0..n {
            y[i * dim + k] = if span > 0.0 {
                INIT_EXTENT * (y[i * dim + k] - lo) / span
            } else {
                0.0
            };
        }
    }
}

fn initial_layout(graph: &FuzzyGraph, dim: usize, seed: u64) -> (Vec<f64>, bool) {
    let n = graph.n;
    let mut g = rng(derive_seed(seed, &[1]));
    let (mut y, random_init): (Vec<f64>, bool) = match spectral_layout(graph, dim, derive_seed(seed, &[2])) {
        Some(spec) => {
            let max_abs = spec.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let expansion = if max_abs > 0.0 { INIT_EXTENT / max_abs } else { 1.0 };
            let y = spec
                .iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut g);
                    v * expansion + INIT_NOISE * e
                })
                .collect();
            (y, false)
        }
        None => {
            log::warn!("spectral initialization failed; using a seeded Gaussian layout");
            let y = (0..n * dim)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut g);
                    e
                })
                .collect();
            (y, true)
        }
    };
    rescale_columns(&mut y, n, dim);
    (y, random_init)
}

/// Fuzzy cross-entropy between the graph and the embedding's membership
/// strengths over all unordered pairs.
fn cross_entropy(graph: &FuzzyGraph, y: &[f64], dim: usize, a: f64, b: f64) -> f64 {
    const EPS: f64 = 1e-12;
    let n = graph.n;
    let mut weights: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n];
    for &(i, j, w) in &graph.edges {
        weights[i].insert(j, w);
    }
    let per_row: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in (i + 1)..n {
                let d2: f64 = (0..dim).map(|k| (y[i * dim + k] - y[j * dim + k]).powi(2)).sum();
                let v = (1.0 / (1.0 + a * d2.powf(b))).clamp(EPS, 1.0 - EPS);
                let w = weights[i].get(&j).copied().unwrap_or(0.0);
                if w > 0.0 {
                    s += w * (w / v).ln();
                }
                if w < 1.0 {
                    s += (1.0 - w) * ((1.0 - w) / (1.0 - v)).ln();
                }
            }
            s
        })
        .collect();
    per_row.iter().sum()
}

/// Fits a UMAP embedding with exact nearest neighbors.
pub fn fit_umap(matrix: &FeatureMatrix, params: &UmapParams) -> Result<Embedding> {
    let n = matrix.n_samples();
    if params.n_neighbors < 2 || params.n_neighbors >= n {
        return Err(invalid!(
            "n_neighbors must satisfy 2 <= n_neighbors < samples ({n}), got {}",
            params.n_neighbors
        ));
    }
    if params.n_components < 1 {
        return Err(invalid!("n_components must be at least 1"));
    }
    if !(params.min_dist >= 0.0 && params.min_dist < params.spread) {
        return Err(invalid!("min_dist must lie in [0, spread)"));
    }
    let dim = params.n_components;
    let data = row_major(matrix.values());
    let (mut graph, _, _) = fuzzy_simplicial_set(&data, n, matrix.n_features(), params.n_neighbors);
    let epochs = params.epochs.max(1);
    let cutoff = graph.max_weight() / epochs as f64;
    graph.edges.retain(|e| e.2 >= cutoff);

    let (a, b) = find_ab_params(params.spread, params.min_dist);
    let (mut y, random_init) = initial_layout(&graph, dim, params.seed);
    optimize_layout(&graph, &mut y, dim, a, b, params);

    let ce = cross_entropy(&graph, &y, dim, a, b);
    let mut hyper = BTreeMap::new();
    hyper.insert("n_neighbors".to_string(), params.n_neighbors as f64);
    hyper.insert("min_dist".to_string(), params.min_dist);
    hyper.insert("n_components".to_string(), dim as f64);
    hyper.insert("epochs".to_string(), params.epochs as f64);
    hyper.insert("negative_sample_rate".to_string(), params.negative_sample_rate as f64);
    hyper.insert("a".to_string(), a);
    hyper.insert("b".to_string(), b);
    Ok(Embedding {
        sample_ids: matrix.sample_ids().to_vec(),
        coords: DMatrix::from_row_slice(n, dim, &y),
        method: Method::Umap,
        hyperparameters: hyper,
        diagnostics: Diagnostics::Umap {
            cross_entropy: ce,
            random_init,
        },
        seed: params.seed,
    })
}

fn optimize_layout(graph: &FuzzyGraph, y: &mut [f64], dim: usize, a: f64, b: f64, params: &UmapParams) {
    let n = graph.n;
    let epochs = params.epochs;
    if graph.edges.is_empty() || epochs == 0 {
        return;
    }
    let max_w = graph.max_weight();
    let epochs_per_sample: Vec<f64> = graph.edges.iter().map(|e| max_w / e.2).collect();
    let neg_rate = params.negative_sample_rate as f64;
    let epochs_per_negative: Vec<f64> = epochs_per_sample
        .iter()
        .map(|e| if neg_rate > 0.0 { e / neg_rate } else { f64::INFINITY })
        .collect();
    let mut next_sample = epochs_per_sample.clone();
    let mut next_negative = epochs_per_negative.clone();
    let mut g = rng(derive_seed(params.seed, &[3]));
    let mut current = vec![0.0; dim];
    let mut other = vec![0.0; dim];

    for epoch in 0..epochs {
        let alpha = params.learning_rate * (1.0 - epoch as f64 / epochs as f64);
        let e = epoch as f64;
        for (idx, &(head, tail, _)) in graph.edges.iter().enumerate() {
            if next_sample[idx] > e {
                continue;
            }
            current.copy_from_slice(&y[head * dim..(head + 1) * dim]);
            other.copy_from_slice(&y[tail * dim..(tail + 1) * dim]);
            let d2: f64 = current.iter().zip(&other).map(|(p, q)| (p - q) * (p - q)).sum();
            let coef = if d2 > 0.0 {
                -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
            } else {
                0.0
            };
            for k in 0..dim {
                let grad = clip(coef * (current[k] - other[k]));
                current[k] += grad * alpha;
                other[k] -= grad * alpha;
            }
            y[tail * dim..(tail + 1) * dim].copy_from_slice(&other);
            next_sample[idx] += epochs_per_sample[idx];

            let n_neg = ((e - next_negative[idx]) / epochs_per_negative[idx]).floor().max(0.0) as usize;
            for _ in 0..n_neg {
                let k = g.random_range(0..n);
                if k == head {
                    continue;
                }
                let o = &y[k * dim..(k + 1) * dim];
                let d2: f64 = current.iter().zip(o).map(|(p, q)| (p - q) * (p - q)).sum();
                if d2 <= 0.0 {
                    continue;
                }
                let coef = 2.0 * params.repulsion_strength * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0));
                for t in 0..dim {
                    current[t] += clip(coef * (current[t] - o[t])) * alpha;
                }
            }
            next_negative[idx] += n_neg as f64 * epochs_per_negative[idx];
            y[head * dim..(head + 1) * dim].copy_from_slice(&current);
        }
    }
}
