//! Linear (PCA, LDA) and non-linear (t-SNE, UMAP) dimensionality reduction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

mod lda;
mod pca;
mod spectral;
mod tsne;
mod tune;
mod umap;

pub use lda::{fit_lda, LdaModel, SINGULAR_CONDITION};
pub use pca::{
    fit_pca, parallel_analysis, select_informative_components, ParallelAnalysisResult, PcaModel,
    DEFAULT_LOADING_THRESHOLD, DEFAULT_PERCENTILE,
};
pub use spectral::spectral_layout;
pub use tsne::{conditional_affinities, fit_tsne, joint_affinities, TsneParams};
pub use tune::{tune_embedding, GridPoint, TuneGrid, TuneResult};
pub use umap::{exact_knn, find_ab_params, fit_umap, fuzzy_simplicial_set, smooth_knn, FuzzyGraph, UmapParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PCA")]
    Pca,
    #[serde(rename = "LDA")]
    Lda,
    #[serde(rename = "TSNE")]
    Tsne,
    #[serde(rename = "UMAP")]
    Umap,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pca, Method::Lda, Method::Tsne, Method::Umap];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pca => "PCA",
            Method::Lda => "LDA",
            Method::Tsne => "TSNE",
            Method::Umap => "UMAP",
        }
    }

    /// Lower-case name used in file names and on the command line.
    pub fn slug(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Lda => "lda",
            Method::Tsne => "tsne",
            Method::Umap => "umap",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(self, Method::Pca | Method::Lda)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace('-', "");
        Method::ALL
            .into_iter()
            .find(|m| m.slug() == t)
            .ok_or_else(|| validation!("unknown method '{s}'; expected one of pca, lda, tsne, umap"))
    }
}

/// Method-specific fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostics {
    ExplainedVariance {
        ratios: Vec<f64>,
    },
    Tsne {
        kl_divergence: f64,
        /// (iteration, KL) pairs sampled during optimization.
        kl_trace: Vec<(usize, f64)>,
    },
    Umap {
        cross_entropy: f64,
        /// True when the spectral initialization failed and a seeded Gaussian
        /// layout was used instead.
        random_init: bool,
    },
    None,
}

/// Low-dimensional coordinates of a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub sample_ids: Vec<String>,
    /// samples x d
    pub coords: DMatrix<f64>,
    pub method: Method,
    pub hyperparameters: BTreeMap<String, f64>,
    pub diagnostics: Diagnostics,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    method: Method,
    n_samples: usize,
    n_components: usize,
    hyperparameters: BTreeMap<String, f64>,
    seed: u64,
    diagnostics: Diagnostics,
}

impl Embedding {
    pub fn n_samples(&self) -> usize {
        self.coords.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coords.row(i).iter().copied().collect()
    }

    pub fn row_major(&self) -> Vec<f64> {
        crate::util::row_major(&self.coords)
    }

    /// Bare embedding around raw coordinates (used by tests and tools).
    pub fn from_coords(sample_ids: Vec<String>, coords: DMatrix<f64>, method: Method) -> Result<Self> {
        if sample_ids.len() != coords.nrows() {
            return Err(validation!(
                "{} sample ids for {} embedding rows",
                sample_ids.len(),
                coords.nrows()
            ));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(validation!("embedding contains non-finite coordinates"));
        }
        Ok(Embedding {
            sample_ids,
            coords,
            method,
            hyperparameters: BTreeMap::new(),
            diagnostics: Diagnostics::None,
            seed: 0,
        })
    }

    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// Writes `sample_id,comp_1,...,comp_d` to `csv_path` and the metadata
    /// sidecar next to it.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        let file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["sample_id".to_string()];
        header.extend((1..=self.dim()).map(|k| format!("comp_{k}")));
        w.write_record(&header)?;
        for (i, id) in self.sample_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend((0..self.dim()).map(|k| self.coords[(i, k)].to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(csv_path, e))?;

        let sidecar = Sidecar {
            method: self.method,
            n_samples: self.n_samples(),
            n_components: self.dim(),
            hyperparameters: self.hyperparameters.clone(),
            seed: self.seed,
            diagnostics: self.diagnostics.clone(),
        };
        let json_path = Self::sidecar_path(csv_path);
        let text = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))
    }

    pub fn read(csv_path: &Path) -> Result<Embedding> {
        let json_path = Self::sidecar_path(csv_path);
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;

        let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let d = rdr.headers()?.len().saturating_sub(1);
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            for cell in rec.iter().skip(1) {
                data.push(cell.trim().parse::<f64>().map_err(|_| {
                    validation!("{}: row {}: bad coordinate '{cell}'", csv_path.display(), row + 1)
                })?);
            }
        }
        let coords = DMatrix::from_row_slice(ids.len(), d, &data);
        let mut emb = Embedding::from_coords(ids, coords, sidecar.method)?;
        emb.hyperparameters = sidecar.hyperparameters;
        emb.diagnostics = sidecar.diagnostics;
        emb.seed = sidecar.seed;
        Ok(emb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let mut e = Embedding::from_coords(
            vec!["a".into(), "b".into()],
            DMatrix::from_row_slice(2, 2, &[0.1, -2.5, 1e-9, 3.0]),
            Method::Tsne,
        )
        .unwrap();
        e.seed = 9;
        e.hyperparameters.insert("perplexity".into(), 30.0);
        e.diagnostics = Diagnostics::Tsne {
            kl_divergence: 0.5,
            kl_trace: vec![(50, 1.0)],
        };
        e.write(&path).unwrap();
        let back = Embedding::read(&path).unwrap();
        assert_eq!(back, e);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,comp_1,comp_2\n"));
    }

    #[test]
    fn method_names() {
        assert_eq!("t-SNE".parse::<Method>().unwrap(), Method::Tsne);
        assert_eq!("UMAP".parse::<Method>().unwrap(), Method::Umap);
        assert!("mds".parse::<Method>().is_err());
    }
}
