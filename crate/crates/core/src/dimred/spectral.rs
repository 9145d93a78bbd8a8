//! Spectral layout from the normalized graph Laplacian.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use super::umap::FuzzyGraph;
use crate::util::{rng, sorted_symmetric_eigen};

const MAX_ITERATIONS: usize = 5000;
const CHECK_EVERY: usize = 10;
const RESIDUAL_TOL: f64 = 1e-6;
const OVERSAMPLE: usize = 3;

/// Row-major n x dim coordinates from the eigenvectors belonging to the
/// smallest non-trivial eigenvalues of `I - D^-1/2 W D^-1/2`.
///
/// Uses block subspace iteration on `(I + D^-1/2 W D^-1/2) / 2` with the
/// trivial eigenvector `D^1/2 1` deflated. Returns `None` when the iteration
/// does not converge or the graph is degenerate.
pub fn spectral_layout(graph: &FuzzyGraph, dim: usize, seed: u64) -> Option<Vec<f64>> {
    let n = graph.n;
    let block = (dim + OVERSAMPLE).min(n.saturating_sub(1));
    if block < dim || dim == 0 {
        return None;
    }
    let mut degree = vec![0.0; n];
    for &(i, _, w) in &graph.edges {
        degree[i] += w;
    }
    if degree.iter().any(|&d| d <= 0.0) {
        return None;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let norm_edges: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .map(|&(i, j, w)| (i, j, w * inv_sqrt[i] * inv_sqrt[j]))
        .collect();
    let trivial = {
        let v: Vec<f64> = degree.iter().map(|d| d.sqrt()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
    };

    // shifted operator (I + A) / 2 applied to a column-major block
    let apply = |x: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = x * 0.5;
        for &(i, j, w) in &norm_edges {
            for c in 0..x.ncols() {
                out[(i, c)] += 0.5 * w * x[(j, c)];
            }
        }
        out
    };
    let deflate = |x: &mut DMatrix<f64>| {
        for c in 0..x.ncols() {
            let dot: f64 = (0..n).map(|r| x[(r, c)] * trivial[r]).sum();
            for r in 0..n {
                x[(r, c)] -= dot * trivial[r];
            }
        }
    };

    let mut g = rng(seed);
    let mut x = DMatrix::from_fn(n, block, |_, _| StandardNormal.sample(&mut g));
    deflate(&mut x);
    x = orthonormalize(x)?;

    for it in 1..=MAX_ITERATIONS {
        let mut y = apply(&x);
        deflate(&mut y);
        x = orthonormalize(y)?;
        if it % CHECK_EVERY == 0 {
            let bx = apply(&x);
            let small = x.transpose() * &bx;
            let small = (&small + small.transpose()) * 0.5;
            let (theta, vecs) = sorted_symmetric_eigen(small);
            let ritz = &x * &vecs;
            let britz = &bx * &vecs;
            let converged = (0..dim).all(|c| {
                let r = britz.column(c) - ritz.column(c) * theta[c];
                r.norm() < RESIDUAL_TOL
            });
            if converged {
                let mut out = vec![0.0; n * dim];
                for i in 0..n {
                    for c in 0..dim {
                        out[i * dim + c] = ritz[(i, c)];
                    }
                }
                for c in 0..dim {
                    // deterministic orientation
                    let mut best = 0;
                    for i in 1..n {
                        if out[i * dim + c].abs() > out[best * dim + c].abs() {
                            best = i;
                        }
                    }
                    if out[best * dim + c] < 0.0 {
                        for i in 0..n {
                            out[i * dim + c] = -out[i * dim + c];
                        }
                    }
                }
                return Some(out);
            }
        }
    }
    None
}

/// Modified Gram-Schmidt on the columns; fails on a rank-deficient block.
fn orthonormalize(mut x: DMatrix<f64>) -> Option<DMatrix<f64>> {
    for c in 0..x.ncols() {
        for prev in 0..c {
            let dot = x.column(c).dot(&x.column(prev));
            let p = x.column(prev).into_owned();
            x.column_mut(c).axpy(-dot, &p, 1.0);
        }
        let norm = x.column(c).norm();
        if !(norm > 1e-300) {
            return None;
        }
        x.column_mut(c).unscale_mut(norm);
    }
    Some(x)
}
