//! Fisher linear discriminant analysis.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Diagnostics, Embedding, Method};
use crate::corpus::{Diagnosis, FeatureMatrix};
use crate::error::{invalid, Error, Result};
use crate::util::{canonical_sign, sorted_symmetric_eigen};

/// Within-class scatter with a larger eigenvalue ratio is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

const SHRINKAGE_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub classes: Vec<Diagnosis>,
    pub mean: Vec<f64>,
    /// features x d; unit-norm discriminant directions.
    pub scalings: DMatrix<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Ridge added to the within-class scatter, when it was singular.
    pub shrinkage: Option<f64>,
}

/// Solves the generalized eigenproblem `S_b v = lambda S_w v` and projects the
/// centered data onto the leading `n_components` directions.
pub fn fit_lda(
    matrix: &FeatureMatrix,
    labels: &[Diagnosis],
    n_components: usize,
) -> Result<(LdaModel, Embedding)> {
    let (n, p) = (matrix.n_samples(), matrix.n_features());
    if labels.len() != n {
        return Err(invalid!("{} labels for {n} samples", labels.len()));
    }
    let mut classes: Vec<Diagnosis> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(invalid!("LDA needs at least 2 distinct labels, found {}", classes.len()));
    }
    let max = (classes.len() - 1).min(p);
    if n_components < 1 || n_components > max {
        return Err(invalid!(
            "n_components must lie in [1, {max}] (classes - 1 = {}), got {n_components}",
            classes.len() - 1
        ));
    }

    let x = matrix.values();
    let overall: DVector<f64> = x.row_mean().transpose();
    let mut sw = DMatrix::<f64>::zeros(p, p);
    let mut sb = DMatrix::<f64>::zeros(p, p);
    for &c in &classes {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let mut mu = DVector::<f64>::zeros(p);
        for &i in &rows {
            mu += x.row(i).transpose();
        }
        mu /= rows.len() as f64;
        for &i in &rows {
            let d = x.row(i).transpose() - &mu;
            sw += &d * d.transpose();
        }
        let dm = &mu - &overall;
        sb += (&dm * dm.transpose()) * rows.len() as f64;
    }

    let (sw_eig, _) = sorted_symmetric_eigen(sw.clone());
    let (hi, lo) = (sw_eig[0], sw_eig[p - 1]);
    let singular = lo <= 0.0 || hi / lo > SINGULAR_CONDITION;
    let shrinkage = if singular {
        let mut gamma = SHRINKAGE_SCALE * sw.trace() / p as f64;
        if gamma <= 0.0 {
            // zero within-class scatter: scale by the between-class spread instead
            gamma = SHRINKAGE_SCALE * (sb.trace() / p as f64).max(1.0);
        }
        for k in 0..p {
            sw[(k, k)] += gamma;
        }
        Some(gamma)
    } else {
        None
    };

    let chol = sw
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("cannot invert Cholesky factor".into()))?;
    let m = &l_inv * &sb * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let (eigvals, eigvecs) = sorted_symmetric_eigen(m);
    let eigvals: Vec<f64> = eigvals.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = eigvals.iter().sum();

    let mut scalings = DMatrix::zeros(p, n_components);
    for k in 0..n_components {
        let u = eigvecs.column(k).into_owned();
        let mut w = l_inv.transpose() * u;
        let norm = w.norm();
        if norm > 0.0 {
            w /= norm;
        }
        canonical_sign(&mut w);
        scalings.set_column(k, &w);
    }

    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-overall[j]);
    }
    let coords = xc * &scalings;
    let explained_variance_ratio: Vec<f64> = eigvals[..n_components]
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();

    let model = LdaModel {
        classes,
        mean: overall.iter().copied().collect(),
        scalings,
        explained_variance_ratio: explained_variance_ratio.clone(),
        shrinkage,
    };
    let mut hyper = BTreeMap::new();
    hyper.insert("n_components".to_string(), n_components as f64);
    if let Some(g) = shrinkage {
        hyper.insert("shrinkage".to_string(), g);
    }
    let embedding = Embedding {
        sample_ids: matrix.sample_ids().to_vec(),
        coords,
        method: Method::Lda,
        hyperparameters: hyper,
        diagnostics: Diagnostics::ExplainedVariance {
            ratios: explained_variance_ratio,
        },
        seed: 0,
    };
    Ok((model, embedding))
}
