//! Grid search over non-linear embedding hyperparameters scored by silhouette.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_tsne, fit_umap, Embedding, TsneParams, UmapParams};
use crate::cluster::{fit_kmeans, silhouette_score, DEFAULT_RESTARTS};
use crate::corpus::FeatureMatrix;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TuneGrid {
    Tsne {
        base: TsneParams,
        perplexity: Vec<f64>,
        n_components: Vec<usize>,
    },
    Umap {
        base: UmapParams,
        n_neighbors: Vec<usize>,
        min_dist: Vec<f64>,
        n_components: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hyperparameters: BTreeMap<String, f64>,
    pub silhouette: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    /// Index into `scores` of the winning point.
    pub best: usize,
    pub embedding: Embedding,
    /// One entry per grid point, in grid order.
    pub scores: Vec<GridPoint>,
}

enum Candidate {
    Tsne(TsneParams),
    Umap(UmapParams),
}

impl TuneGrid {
    /// Cartesian product in row-major order (first list varies slowest).
    fn candidates(&self, seed: u64) -> Vec<Candidate> {
        match self {
            TuneGrid::Tsne {
                base,
                perplexity,
                n_components,
            } => perplexity
                .iter()
                .flat_map(|&p| {
                    n_components.iter().map(move |&d| {
                        Candidate::Tsne(TsneParams {
                            perplexity: p,
                            n_components: d,
                            seed,
                            ..base.clone()
                        })
                    })
                })
                .collect(),
            TuneGrid::Umap {
                base,
                n_neighbors,
                min_dist,
                n_components,
            } => n_neighbors
                .iter()
                .flat_map(|&k| {
                    min_dist.iter().flat_map(move |&md| {
                        n_components.iter().map(move |&d| {
                            Candidate::Umap(UmapParams {
                                n_neighbors: k,
                                min_dist: md,
                                n_components: d,
                                seed,
                                ..base.clone()
                            })
                        })
                    })
                })
                .collect(),
        }
    }
}

/// Fits every grid point, scores K-Means(`k_eval`) silhouette and returns the
/// argmax; ties go to the earlier grid point.
pub fn tune_embedding(matrix: &FeatureMatrix, grid: &TuneGrid, k_eval: usize, seed: u64) -> Result<TuneResult> {
    let candidates = grid.candidates(seed);
    if candidates.is_empty() {
        return Err(invalid!("hyperparameter grid is empty"));
    }
    let fitted: Vec<(Embedding, f64)> = candidates
        .par_iter()
        .map(|c| {
            let emb = match c {
                Candidate::Tsne(p) => fit_tsne(matrix, p)?,
                Candidate::Umap(p) => fit_umap(matrix, p)?,
            };
            let assignment = fit_kmeans(&emb, k_eval, seed, DEFAULT_RESTARTS)?;
            let s = silhouette_score(&emb, &assignment.labels)?;
            Ok((emb, s))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (i, (_, s)) in fitted.iter().enumerate() {
        if *s > fitted[best].1 {
            best = i;
        }
    }
    let scores = fitted
        .iter()
        .map(|(e, s)| GridPoint {
            hyperparameters: e.hyperparameters.clone(),
            silhouette: *s,
        })
        .collect();
    let embedding = fitted.into_iter().nth(best).unwrap().0;
    Ok(TuneResult {
        best,
        embedding,
        scores,
    })
}
