//! Exact t-SNE.
//!
//! Affinities use a Gaussian kernel whose per-point precision is found by
//! bisection on the row entropy; the layout is optimized by gradient descent
//! with momentum, per-coordinate gains and an early-exaggeration phase.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_pca, Diagnostics, Embedding, Method};
use crate::corpus::FeatureMatrix;
use crate::error::{invalid, Result};
use crate::util::{rng, row_major};

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTION_STEPS: usize = 200;
const MIN_GAIN: f64 = 0.01;
const KL_TRACE_EVERY: usize = 50;
const INIT_STD: f64 = 1e-4;
const P_FLOOR: f64 = f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub n_components: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            perplexity: 30.0,
            n_components: 2,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

fn pairwise_sq_distances(data: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = &data[i * d..(i + 1) * d];
        for (j, slot) in row.iter_mut().enumerate() {
            if j != i {
                let xj = &data[j * d..(j + 1) * d];
                *slot = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        }
    });
    out
}

/// Row-normalized conditional distribution for one point given its squared
/// distances (self excluded by index). Returns (probabilities, beta).
fn calibrate_row(dists: &[f64], self_index: usize, log_perplexity: f64) -> (Vec<f64>, f64) {
    let n = dists.len();
    let d_min = dists
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != self_index)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut beta = 1.0;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut p = vec![0.0; n];

    let eval = |beta: f64, p: &mut [f64]| -> f64 {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            if j == self_index {
                p[j] = 0.0;
                continue;
            }
            let shifted = dists[j] - d_min;
            let v = (-beta * shifted).exp();
            p[j] = v;
            sum += v;
            weighted += shifted * v;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        for v in p.iter_mut() {
            *v /= sum;
        }
        entropy
    };

    for _ in 0..MAX_BISECTION_STEPS {
        let h = eval(beta, &mut p);
        let diff = h - log_perplexity;
        if diff.abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
    eval(beta, &mut p);
    (p, beta)
}

/// Conditional affinities `p_{j|i}` (row-major n x n) calibrated so each row's
/// perplexity matches `perplexity`, from row-major `data` (n x d).
pub fn conditional_affinities(data: &[f64], n: usize, d: usize, perplexity: f64) -> Vec<f64> {
    let dist = pairwise_sq_distances(data, n, d);
    let log_perp = perplexity.ln();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| calibrate_row(&dist[i * n..(i + 1) * n], i, log_perp).0)
        .collect();
    rows.concat()
}

/// Symmetrized joint affinities `(p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_affinities(conditional: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

struct StepOutput {
    grad: Vec<f64>,
    kl: f64,
}

/// Gradient of KL(P_exaggerated || Q) and the unexaggerated KL(P || Q).
fn gradient(p: &[f64], y: &[f64], n: usize, dim: usize, exaggeration: f64) -> StepOutput {
    // pass 1: normalization of the Student-t kernel
    let row_sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = &y[i * dim..(i + 1) * dim];
            let mut s = 0.0;
            for j in 0..n {
                if j != i {
                    let yj = &y[j * dim..(j + 1) * dim];
                    let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                    s += 1.0 / (1.0 + d2);
                }
            }
            s
        })
        .collect();
    let z: f64 = row_sums.iter().sum();

    // pass 2: forces and KL contributions
    let per_row: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = &y[i * dim..(i + 1) * dim];
            let mut g = vec![0.0; dim];
            let mut kl = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let yj = &y[j * dim..(j + 1) * dim];
                let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                let num = 1.0 / (1.0 + d2);
                let q = (num / z).max(P_FLOOR);
                let pij = p[i * n + j];
                if pij > 0.0 {
                    kl += pij * (pij.max(P_FLOOR) / q).ln();
                }
                let coef = 4.0 * (exaggeration * pij - q) * num;
                for k in 0..dim {
                    g[k] += coef * (yi[k] - yj[k]);
                }
            }
            (g, kl)
        })
        .collect();

    let mut grad = Vec::with_capacity(n * dim);
    let mut kl = 0.0;
    for (g, k) in per_row {
        grad.extend(g);
        kl += k;
    }
    StepOutput { grad, kl }
}

fn initial_layout(matrix: &FeatureMatrix, dim: usize, seed: u64) -> Result<Vec<f64>> {
    let n = matrix.n_samples();
    let usable = dim.min(matrix.n_features()).min(n.saturating_sub(1));
    let mut y = vec![0.0; n * dim];
    if usable > 0 {
        let (_, pca) = fit_pca(matrix, usable)?;
        let c0: Vec<f64> = pca.coords.column(0).iter().copied().collect();
        let mean = c0.iter().sum::<f64>() / n as f64;
        let sd = (c0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        let scale = if sd > 0.0 { INIT_STD / sd } else { 0.0 };
        for i in 0..n {
            for k in 0..usable {
                y[i * dim + k] = pca.coords[(i, k)] * scale;
            }
        }
    }
    if usable < dim {
        let mut g = rng(seed);
        for i in 0..n {
            for k in usable..dim {
                let e: f64 = StandardNormal.sample(&mut g);
                y[i * dim + k] = e * INIT_STD;
            }
        }
    }
    Ok(y)
}

/// Fits an exact t-SNE embedding.
pub fn fit_tsne(matrix: &FeatureMatrix, params: &TsneParams) -> Result<Embedding> {
    let n = matrix.n_samples();
    if params.perplexity <= 1.0 {
        return Err(invalid!("perplexity must exceed 1, got {}", params.perplexity));
    }
    if (n as f64) < 3.0 * params.perplexity {
        return Err(invalid!(
            "t-SNE needs at least 3 x perplexity samples ({n} < {})",
            3.0 * params.perplexity
        ));
    }
    if !(2..=3).contains(&params.n_components) {
        return Err(invalid!("n_components must be 2 or 3, got {}", params.n_components));
    }
    let dim = params.n_components;
    let data = row_major(matrix.values());
    let cond = conditional_affinities(&data, n, matrix.n_features(), params.perplexity);
    let p = joint_affinities(&cond, n);

    let mut y = initial_layout(matrix, dim, params.seed)?;
    let mut update = vec![0.0; n * dim];
    let mut gains = vec![1.0f64; n * dim];
    let mut trace = Vec::new();

    for it in 0..params.iterations {
        let exaggerating = it < params.exaggeration_iterations;
        if it == params.exaggeration_iterations {
            // second descent phase starts from fresh optimizer state
            update.iter_mut().for_each(|u| *u = 0.0);
            gains.iter_mut().for_each(|g| *g = 1.0);
        }
        let (ex, momentum) = if exaggerating {
            (params.early_exaggeration, params.initial_momentum)
        } else {
            (1.0, params.final_momentum)
        };
        let step = gradient(&p, &y, n, dim, ex);
        // trace entry `it` is the KL after `it` updates, always against the true P
        if it > 0 && it % KL_TRACE_EVERY == 0 {
            let value = if exaggerating { kl_divergence(&p, &y, n, dim) } else { step.kl };
            trace.push((it, value));
        }
        for k in 0..n * dim {
            let g = step.grad[k];
            if update[k] * g < 0.0 {
                gains[k] += 0.2;
            } else {
                gains[k] *= 0.8;
            }
            gains[k] = gains[k].max(MIN_GAIN);
            update[k] = momentum * update[k] - params.learning_rate * gains[k] * g;
            y[k] += update[k];
        }
    }
    let kl = kl_divergence(&p, &y, n, dim);
    if trace.last().map(|t| t.0) != Some(params.iterations) {
        trace.push((params.iterations, kl));
    }

    let coords = DMatrix::from_row_slice(n, dim, &y);
    let mut hyper = BTreeMap::new();
    hyper.insert("perplexity".to_string(), params.perplexity);
    hyper.insert("n_components".to_string(), dim as f64);
    hyper.insert("iterations".to_string(), params.iterations as f64);
    hyper.insert("learning_rate".to_string(), params.learning_rate);
    hyper.insert("early_exaggeration".to_string(), params.early_exaggeration);
    Ok(Embedding {
        sample_ids: matrix.sample_ids().to_vec(),
        coords,
        method: Method::Tsne,
        hyperparameters: hyper,
        diagnostics: Diagnostics::Tsne {
            kl_divergence: kl,
            kl_trace: trace,
        },
        seed: params.seed,
    })
}

/// KL(P || Q) for a layout.
fn kl_divergence(p: &[f64], y: &[f64], n: usize, dim: usize) -> f64 {
    gradient(p, y, n, dim, 1.0).kl
}
