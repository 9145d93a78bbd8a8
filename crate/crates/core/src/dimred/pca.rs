//! Principal component analysis, Horn's parallel analysis and loading-based
//! component selection.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Diagnostics, Embedding, Method};
use crate::corpus::{pearson, FeatureMatrix};
use crate::error::{invalid, Result};
use crate::util::{canonical_sign, derive_seed, percentile, rng, sorted_symmetric_eigen};

pub const DEFAULT_PERCENTILE: f64 = 95.0;
pub const DEFAULT_LOADING_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    /// d x features, orthonormal rows ordered by descending variance.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// features x d; Pearson correlation of each feature with each score.
    pub loadings: DMatrix<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    /// Scores of arbitrary rows (samples x features) under the fitted model.
    pub fn transform(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = values.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
        }
        centered * self.components.transpose()
    }
}

fn centered(values: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = values.nrows() as f64;
    let mut out = values.clone();
    let mut means = Vec::with_capacity(values.ncols());
    for mut col in out.column_iter_mut() {
        let m = col.sum() / n;
        col.add_scalar_mut(-m);
        means.push(m);
    }
    (out, means)
}

/// Fits PCA by eigendecomposition of the sample covariance matrix.
pub fn fit_pca(matrix: &FeatureMatrix, n_components: usize) -> Result<(PcaModel, Embedding)> {
    let (n, p) = (matrix.n_samples(), matrix.n_features());
    let max = (n.saturating_sub(1)).min(p);
    if n_components < 1 || n_components > max {
        return Err(invalid!(
            "n_components must lie in [1, {max}] (min(samples-1, features)), got {n_components}"
        ));
    }
    let (xc, mean) = centered(matrix.values());
    let cov = (xc.transpose() * &xc) / (n as f64 - 1.0);
    let (eigvals, eigvecs) = sorted_symmetric_eigen(cov);
    let eigvals: Vec<f64> = eigvals.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = eigvals.iter().sum();

    let mut components = DMatrix::zeros(n_components, p);
    for k in 0..n_components {
        let mut v: DVector<f64> = eigvecs.column(k).into_owned();
        canonical_sign(&mut v);
        components.set_row(k, &v.transpose());
    }
    let scores = &xc * components.transpose();

    let mut loadings = DMatrix::zeros(p, n_components);
    for k in 0..n_components {
        let s: Vec<f64> = scores.column(k).iter().copied().collect();
        for j in 0..p {
            let f: Vec<f64> = matrix.values().column(j).iter().copied().collect();
            loadings[(j, k)] = pearson(&f, &s);
        }
    }

    let explained_variance: Vec<f64> = eigvals[..n_components].to_vec();
    let explained_variance_ratio: Vec<f64> = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();

    let model = PcaModel {
        feature_names: matrix.feature_names().to_vec(),
        mean,
        components,
        explained_variance,
        explained_variance_ratio: explained_variance_ratio.clone(),
        loadings,
    };
    let mut hyper = BTreeMap::new();
    hyper.insert("n_components".to_string(), n_components as f64);
    let embedding = Embedding {
        sample_ids: matrix.sample_ids().to_vec(),
        coords: scores,
        method: Method::Pca,
        hyperparameters: hyper,
        diagnostics: Diagnostics::ExplainedVariance {
            ratios: explained_variance_ratio,
        },
        seed: 0,
    };
    Ok((model, embedding))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelAnalysisResult {
    pub observed_eigenvalues: Vec<f64>,
    pub noise_percentile_eigenvalues: Vec<f64>,
    pub retained_count: usize,
    pub mc_reps: usize,
    pub percentile: f64,
}

/// Descending eigenvalues of the Pearson correlation matrix of `values`.
/// Constant columns contribute a zero row and column.
fn correlation_eigenvalues(values: &DMatrix<f64>) -> Vec<f64> {
    let n = values.nrows() as f64;
    let (mut xc, _) = centered(values);
    for mut col in xc.column_iter_mut() {
        let sd = (col.norm_squared() / n).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
    let corr = (xc.transpose() * &xc) / n;
    sorted_symmetric_eigen(corr).0
}

/// Horn's parallel analysis on the correlation spectrum: a component is
/// retained when its observed eigenvalue exceeds the given percentile of the
/// same-rank eigenvalue over `mc_reps` standard-normal matrices of equal shape.
pub fn parallel_analysis(
    matrix: &FeatureMatrix,
    mc_reps: usize,
    pct: f64,
    seed: u64,
) -> Result<ParallelAnalysisResult> {
    if mc_reps < 1 {
        return Err(invalid!("mc_reps must be at least 1"));
    }
    if !(0.0..=100.0).contains(&pct) {
        return Err(invalid!("percentile must lie in [0, 100], got {pct}"));
    }
    let (n, p) = (matrix.n_samples(), matrix.n_features());
    if n < 2 || p < 1 {
        return Err(invalid!("parallel analysis needs at least 2 samples and 1 feature"));
    }
    let observed = correlation_eigenvalues(matrix.values());

    let reps: Vec<Vec<f64>> = (0..mc_reps)
        .into_par_iter()
        .map(|r| {
            let mut g = rng(derive_seed(seed, &[r as u64]));
            let noise = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut g));
            correlation_eigenvalues(&noise)
        })
        .collect();

    let noise_percentile_eigenvalues: Vec<f64> = (0..p)
        .map(|k| {
            let column: Vec<f64> = reps.iter().map(|r| r[k]).collect();
            percentile(&column, pct)
        })
        .collect();
    let retained_count = observed
        .iter()
        .zip(&noise_percentile_eigenvalues)
        .filter(|(o, q)| o > q)
        .count();
    Ok(ParallelAnalysisResult {
        observed_eigenvalues: observed,
        noise_percentile_eigenvalues,
        retained_count,
        mc_reps,
        percentile: pct,
    })
}

/// Indices, in explained-variance order, of the first `candidate_count`
/// components that have at least one feature with |loading| >= threshold.
pub fn select_informative_components(
    model: &PcaModel,
    candidate_count: usize,
    loading_threshold: f64,
) -> Result<Vec<usize>> {
    if !(loading_threshold > 0.0 && loading_threshold <= 1.0) {
        return Err(invalid!("loading threshold must lie in (0, 1], got {loading_threshold}"));
    }
    if candidate_count > model.n_components() {
        return Err(invalid!(
            "candidate_count {candidate_count} exceeds the {} fitted components",
            model.n_components()
        ));
    }
    Ok((0..candidate_count)
        .filter(|&k| model.loadings.column(k).iter().any(|l| l.abs() >= loading_threshold))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Diagnosis;

    fn matrix(values: DMatrix<f64>) -> FeatureMatrix {
        let n = values.nrows();
        let p = values.ncols();
        FeatureMatrix::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..n).map(|i| format!("p{i}")).collect(),
            vec!["d".into(); n],
            vec![Diagnosis::HC; n],
            (0..p).map(|j| format!("f{j}")).collect(),
            values,
        )
        .unwrap()
    }

    #[test]
    fn rank_one_line() {
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0, 3.5];
        let v = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { xs[i] } else { 2.0 * xs[i] });
        let (model, emb) = fit_pca(&matrix(v), 2).unwrap();
        assert!((model.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(model.explained_variance_ratio[1].abs() < 1e-12);
        assert_eq!(emb.coords.shape(), (6, 2));
    }

    #[test]
    fn diagonal_covariance() {
        // exact variances 4 and 1 with zero covariance
        let pts = [(2.0, 1.0), (-2.0, 1.0), (2.0, -1.0), (-2.0, -1.0)];
        let v = DMatrix::from_fn(4, 2, |i, j| if j == 0 { pts[i].0 } else { pts[i].1 });
        let (model, _) = fit_pca(&matrix(v), 2).unwrap();
        assert!((model.explained_variance_ratio[0] - 0.8).abs() < 1e-12);
        assert!((model.explained_variance_ratio[1] - 0.2).abs() < 1e-12);
        assert!((model.components[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(model.components[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn feature_equal_to_score_has_unit_loading() {
        // orthogonal centered columns; PC1 lies exactly along f0
        let f0 = [10.0, -10.0, 10.0, -10.0, 10.0, -10.0, 10.0, -10.0];
        let f1 = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let f2 = [0.5, 0.5, 0.5, 0.5, -0.5, -0.5, -0.5, -0.5];
        let v = DMatrix::from_fn(8, 3, |i, j| [f0[i], f1[i], f2[i]][j]);
        let (model, emb) = fit_pca(&matrix(v), 2).unwrap();
        assert!((model.loadings[(0, 0)].abs() - 1.0).abs() < 1e-9);
        for i in 0..8 {
            assert!((emb.coords[(i, 0)].abs() - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_components() {
        let v = DMatrix::from_fn(5, 3, |i, j| (i * 3 + j * j) as f64);
        assert!(fit_pca(&matrix(v.clone()), 0).is_err());
        assert!(fit_pca(&matrix(v.clone()), 4).is_err());
        assert!(fit_pca(&matrix(v), 3).is_ok());
    }

    #[test]
    fn parallel_analysis_needs_reps() {
        let v = DMatrix::from_fn(10, 3, |i, j| ((i * 7 + j * 3) % 5) as f64);
        assert!(parallel_analysis(&matrix(v), 0, 95.0, 1).is_err());
    }

    #[test]
    fn rank_one_signal_is_retained() {
        let mut g = rng(11);
        let u: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut g)).collect();
        let w: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut g)).collect();
        let v = DMatrix::from_fn(100, 20, |i, j| {
            let e: f64 = StandardNormal.sample(&mut g);
            10.0 * u[i] * w[j] + 0.1 * e
        });
        let res = parallel_analysis(&matrix(v), 50, 95.0, 5).unwrap();
        assert!(res.retained_count >= 1);
        let count = res
            .observed_eigenvalues
            .iter()
            .zip(&res.noise_percentile_eigenvalues)
            .filter(|(a, b)| a > b)
            .count();
        assert_eq!(count, res.retained_count);
    }

    #[test]
    fn loading_threshold_boundary() {
        let model = PcaModel {
            feature_names: vec!["a".into(), "b".into()],
            mean: vec![0.0; 2],
            components: DMatrix::identity(3, 2),
            explained_variance: vec![3.0, 2.0, 1.0],
            explained_variance_ratio: vec![0.5, 0.33, 0.17],
            loadings: DMatrix::from_row_slice(2, 3, &[0.39, 0.8, -0.5, 0.1, 0.0, 0.2]),
        };
        assert_eq!(select_informative_components(&model, 3, 0.4).unwrap(), vec![1, 2]);
        assert_eq!(select_informative_components(&model, 3, 0.39).unwrap(), vec![0, 1, 2]);
        assert!(select_informative_components(&model, 3, 0.0).is_err());
        assert!(select_informative_components(&model, 3, 1.5).is_err());
        assert!(select_informative_components(&model, 4, 0.4).is_err());
    }
}
