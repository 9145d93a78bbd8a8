use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Category, Diagnosis, MatrixSchema, DEFAULT_CORR_THRESHOLD};
use crate::dimred::Method;
use crate::error::{Error, Result};
use crate::explain::{CohortRequest, NeighborhoodStrategy};

/// Study configuration. Read from a flat TOML file; every key can also be
/// set from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub matrix: PathBuf,
    pub categories: PathBuf,
    pub seed: u64,
    #[serde(default = "default_out_dir", skip_serializing)]
    pub out_dir: PathBuf,

    #[serde(default = "default_sample_id_column")]
    pub sample_id_column: String,
    #[serde(default = "default_subject_id_column")]
    pub subject_id_column: String,
    #[serde(default = "default_dataset_column")]
    pub dataset_column: String,
    #[serde(default = "default_label_column")]
    pub label_column: String,

    #[serde(default = "default_corr_threshold")]
    pub corr_threshold: f64,

    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,

    #[serde(default = "default_mc_reps")]
    pub pca_mc_reps: usize,
    #[serde(default = "default_percentile")]
    pub pca_percentile: f64,
    #[serde(default = "default_loading_threshold")]
    pub pca_loading_threshold: f64,
    /// Skips parallel analysis when set.
    #[serde(default)]
    pub pca_n_components: Option<usize>,

    /// Defaults to classes - 1.
    #[serde(default)]
    pub lda_n_components: Option<usize>,

    #[serde(default = "default_perplexity")]
    pub tsne_perplexity: f64,
    #[serde(default = "default_two")]
    pub tsne_n_components: usize,
    #[serde(default = "default_tsne_iterations")]
    pub tsne_iterations: usize,
    /// Non-empty enables grid tuning over these perplexities.
    #[serde(default)]
    pub tsne_perplexity_grid: Vec<f64>,

    #[serde(default = "default_n_neighbors")]
    pub umap_n_neighbors: usize,
    #[serde(default = "default_min_dist")]
    pub umap_min_dist: f64,
    #[serde(default = "default_two")]
    pub umap_n_components: usize,
    #[serde(default = "default_umap_epochs")]
    pub umap_epochs: usize,
    #[serde(default)]
    pub umap_n_neighbors_grid: Vec<usize>,
    #[serde(default)]
    pub umap_min_dist_grid: Vec<f64>,

    #[serde(default = "default_k_min")]
    pub elbow_k_min: usize,
    #[serde(default = "default_k_max")]
    pub elbow_k_max: usize,
    #[serde(default = "default_silhouette_k")]
    pub silhouette_k: usize,
    #[serde(default = "default_restarts")]
    pub kmeans_restarts: usize,

    #[serde(default = "default_explain_method")]
    pub explain_method: Method,
    /// Empty selects, per label, the cluster holding most of that label.
    #[serde(default)]
    pub explain_requests: Vec<CohortRequest>,
    #[serde(default = "default_neighborhood")]
    pub explain_neighborhood: usize,
    #[serde(default = "default_top_m")]
    pub explain_top_m: usize,
    #[serde(default = "default_ridge_lambda")]
    pub explain_ridge_lambda: f64,
    #[serde(default)]
    pub explain_kernel_width: Option<f64>,
    #[serde(default = "default_strategy")]
    pub explain_strategy: NeighborhoodStrategy,

    /// Pairs `A:B` where each side is a label (all of its groups) or a group
    /// such as `HC@1`. Empty selects the default pairs.
    #[serde(default)]
    pub stats_pairs: Vec<String>,

    #[serde(default = "default_folds")]
    pub classify_folds: usize,
    /// Empty takes the categories separating AD from Depr in the stats table.
    #[serde(default)]
    pub classify_differentiators: Vec<Category>,
    #[serde(default = "default_hidden")]
    pub mlp_hidden: Vec<usize>,
    #[serde(default = "default_mlp_lr")]
    pub mlp_learning_rate: f64,
    #[serde(default = "default_mlp_l2")]
    pub mlp_l2: f64,
    #[serde(default)]
    pub mlp_batch_size: Option<usize>,
    #[serde(default = "default_mlp_epochs")]
    pub mlp_max_epochs: usize,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_sample_id_column() -> String {
    MatrixSchema::default().sample_id
}
fn default_subject_id_column() -> String {
    MatrixSchema::default().subject_id
}
fn default_dataset_column() -> String {
    MatrixSchema::default().dataset
}
fn default_label_column() -> String {
    MatrixSchema::default().label
}
fn default_corr_threshold() -> f64 {
    DEFAULT_CORR_THRESHOLD
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_mc_reps() -> usize {
    100
}
fn default_percentile() -> f64 {
    crate::dimred::DEFAULT_PERCENTILE
}
fn default_loading_threshold() -> f64 {
    crate::dimred::DEFAULT_LOADING_THRESHOLD
}
fn default_perplexity() -> f64 {
    30.0
}
fn default_two() -> usize {
    2
}
fn default_tsne_iterations() -> usize {
    1000
}
fn default_n_neighbors() -> usize {
    50
}
fn default_min_dist() -> f64 {
    0.1
}
fn default_umap_epochs() -> usize {
    500
}
fn default_k_min() -> usize {
    2
}
fn default_k_max() -> usize {
    10
}
fn default_silhouette_k() -> usize {
    4
}
fn default_restarts() -> usize {
    crate::cluster::DEFAULT_RESTARTS
}
fn default_explain_method() -> Method {
    Method::Tsne
}
fn default_neighborhood() -> usize {
    50
}
fn default_top_m() -> usize {
    5
}
fn default_ridge_lambda() -> f64 {
    1e-3
}
fn default_strategy() -> NeighborhoodStrategy {
    NeighborhoodStrategy::Nearest
}
fn default_folds() -> usize {
    10
}
fn default_hidden() -> Vec<usize> {
    vec![100]
}
fn default_mlp_lr() -> f64 {
    1e-3
}
fn default_mlp_l2() -> f64 {
    1e-4
}
fn default_mlp_epochs() -> usize {
    200
}

/// One side of a statistics pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairSide {
    Label(Diagnosis),
    Group(String),
}

impl PairSide {
    pub fn name(&self) -> String {
        match self {
            PairSide::Label(d) => d.to_string(),
            PairSide::Group(g) => g.clone(),
        }
    }
}

pub fn parse_pair(s: &str) -> Result<(PairSide, PairSide)> {
    let side = |t: &str| -> Result<PairSide> {
        let t = t.trim();
        match t.split_once('@') {
            Some((label, cluster)) => {
                let d: Diagnosis = label.parse()?;
                let c: usize = cluster
                    .parse()
                    .map_err(|_| Error::Config(format!("bad cluster id in '{t}'")))?;
                Ok(PairSide::Group(format!("{d}@{c}")))
            }
            None => Ok(PairSide::Label(t.parse()?)),
        }
    };
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("stats pair '{s}' must look like A:B")))?;
    Ok((side(a)?, side(b)?))
}

impl PipelineConfig {
    /// Parses TOML text, then applies `key=value` overrides (values are TOML
    /// literals; bare words are taken as strings).
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_table(parse_table(text)?, overrides)
    }

    /// Reads the config file if given. Relative paths inside the file resolve
    /// against its directory; override values resolve against the working
    /// directory.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => parse_table(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => toml::Table::new(),
        };
        if let Some(dir) = path.and_then(Path::parent) {
            for key in ["matrix", "categories", "out_dir"] {
                if let Some(toml::Value::String(s)) = table.get_mut(key) {
                    if Path::new(s.as_str()).is_relative() {
                        *s = dir.join(s.as_str()).to_string_lossy().into_owned();
                    }
                }
            }
        }
        Self::from_table(table, overrides)
    }

    fn from_table(mut table: toml::Table, overrides: &[(String, String)]) -> Result<Self> {
        for (key, raw) in overrides {
            table.insert(key.replace('-', "_"), parse_value(raw));
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))
    }

    pub fn schema(&self) -> MatrixSchema {
        MatrixSchema {
            sample_id: self.sample_id_column.clone(),
            subject_id: self.subject_id_column.clone(),
            dataset: self.dataset_column.clone(),
            label: self.label_column.clone(),
        }
    }

    pub fn k_values(&self) -> Vec<usize> {
        (self.elbow_k_min..=self.elbow_k_max).collect()
    }

    /// Checks everything that can be checked without reading the data.
    pub fn validate(&self) -> Result<()> {
        for (key, p) in [("matrix", &self.matrix), ("categories", &self.categories)] {
            if !p.is_file() {
                return Err(Error::Config(format!("{key} file not found: {}", p.display())));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no embedding methods enabled".into()));
        }
        if !self.methods.contains(&self.explain_method) {
            return Err(Error::Config(format!(
                "explain_method {} is not among the enabled methods",
                self.explain_method
            )));
        }
        if self.elbow_k_min < 1 || self.elbow_k_max < self.elbow_k_min + 2 {
            return Err(Error::Config("the elbow K range needs at least 3 values starting at 1 or more".into()));
        }
        if self.silhouette_k < 2 {
            return Err(Error::Config("silhouette_k must be at least 2".into()));
        }
        if !(self.corr_threshold > 0.0 && self.corr_threshold <= 1.0) {
            return Err(Error::Config("corr_threshold must lie in (0, 1]".into()));
        }
        for p in &self.stats_pairs {
            parse_pair(p)?;
        }
        Ok(())
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = PipelineConfig::from_toml(
            "matrix = \"m.csv\"\ncategories = \"c.json\"\nseed = 3\n",
            &[("tsne_perplexity".into(), "20".into()), ("explain_method".into(), "UMAP".into())],
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.tsne_perplexity, 20.0);
        assert_eq!(cfg.explain_method, Method::Umap);
        assert_eq!(cfg.methods.len(), 4);
        assert_eq!(cfg.k_values(), (2..=10).collect::<Vec<_>>());
        assert_eq!(cfg.silhouette_k, 4);
    }

    #[test]
    fn seed_is_required() {
        let e = PipelineConfig::from_toml("matrix = \"m.csv\"\ncategories = \"c.json\"\n", &[]).unwrap_err();
        assert!(e.to_string().contains("seed"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("matrix = \"m\"\ncategories = \"c\"\nseed = 1\nbogus = 2\n", &[]).is_err());
    }

    #[test]
    fn pairs() {
        assert_eq!(
            parse_pair("AD:HC@1").unwrap(),
            (PairSide::Label(Diagnosis::AD), PairSide::Group("HC@1".into()))
        );
        assert!(parse_pair("AD").is_err());
        assert!(parse_pair("AD:XX").is_err());
    }
}
