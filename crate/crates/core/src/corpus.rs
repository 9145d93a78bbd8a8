//! Feature matrices, the feature-category taxonomy and preprocessing.
//!
//! A [`FeatureMatrix`] is read from a CSV whose first four columns carry the
//! sample id, subject id, dataset tag and diagnosis label; every remaining
//! column is a numeric feature. [`preprocess`] drops constant columns,
//! standardizes the rest and prunes highly correlated pairs.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, validation, Error, Result};

/// Columns with a population standard deviation below this are constant.
pub const CONSTANT_STD_EPS: f64 = 1e-12;

pub const DEFAULT_CORR_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Diagnosis {
    HC,
    AD,
    MCI,
    Depr,
}

impl Diagnosis {
    /// Canonical order, also used for plot colors.
    pub const ALL: [Diagnosis; 4] = [Diagnosis::HC, Diagnosis::AD, Diagnosis::MCI, Diagnosis::Depr];

    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::HC => "HC",
            Diagnosis::AD => "AD",
            Diagnosis::MCI => "MCI",
            Diagnosis::Depr => "Depr",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Diagnosis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Diagnosis::ALL
            .into_iter()
            .find(|d| d.as_str().to_ascii_lowercase() == lower)
            .ok_or_else(|| validation!("unknown label '{s}'; permitted labels are HC, AD, MCI, Depr"))
    }
}

/// The nine symptom-aligned feature categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Acoustic,
    SyntacticComplexity,
    DiscourseMapping,
    LexicalComplexityRichness,
    InformationContentUnits,
    Sentiment,
    WordFindingDifficulty,
    Coherence,
    UtteranceCohesion,
}

impl Category {
    pub const COUNT: usize = 9;

    pub const ALL: [Category; Category::COUNT] = [
        Category::Acoustic,
        Category::SyntacticComplexity,
        Category::DiscourseMapping,
        Category::LexicalComplexityRichness,
        Category::InformationContentUnits,
        Category::Sentiment,
        Category::WordFindingDifficulty,
        Category::Coherence,
        Category::UtteranceCohesion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Acoustic => "acoustic",
            Category::SyntacticComplexity => "syntactic complexity",
            Category::DiscourseMapping => "discourse mapping",
            Category::LexicalComplexityRichness => "lexical complexity and richness",
            Category::InformationContentUnits => "information content units",
            Category::Sentiment => "sentiment",
            Category::WordFindingDifficulty => "word finding difficulty",
            Category::Coherence => "coherence",
            Category::UtteranceCohesion => "utterance cohesion",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    /// Case-insensitive; `_` and `-` are read as spaces.
    fn from_str(s: &str) -> Result<Self> {
        let normalized = s
            .to_ascii_lowercase()
            .replace(['_', '-'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let normalized = match normalized.as_str() {
            "coherence (global and local)" | "global and local coherence" => "coherence".to_string(),
            "lexical complexity & richness" => "lexical complexity and richness".to_string(),
            _ => normalized,
        };
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == normalized)
            .ok_or_else(|| {
                let valid: Vec<_> = Category::ALL.iter().map(|c| c.as_str()).collect();
                validation!("unknown category '{s}'; valid categories are: {}", valid.join(", "))
            })
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Header names of the metadata columns of a feature-matrix CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixSchema {
    pub sample_id: String,
    pub subject_id: String,
    pub dataset: String,
    pub label: String,
}

impl Default for MatrixSchema {
    fn default() -> Self {
        MatrixSchema {
            sample_id: "sample_id".into(),
            subject_id: "subject_id".into(),
            dataset: "dataset".into(),
            label: "label".into(),
        }
    }
}

/// Samples by features, with per-sample metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    sample_ids: Vec<String>,
    subject_ids: Vec<String>,
    dataset_tags: Vec<String>,
    labels: Vec<Diagnosis>,
    feature_names: Vec<String>,
    values: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(
        sample_ids: Vec<String>,
        subject_ids: Vec<String>,
        dataset_tags: Vec<String>,
        labels: Vec<Diagnosis>,
        feature_names: Vec<String>,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        let n = values.nrows();
        if sample_ids.len() != n || subject_ids.len() != n || dataset_tags.len() != n || labels.len() != n {
            return Err(validation!(
                "metadata lengths ({}, {}, {}, {}) do not match {n} rows",
                sample_ids.len(),
                subject_ids.len(),
                dataset_tags.len(),
                labels.len()
            ));
        }
        if feature_names.len() != values.ncols() {
            return Err(validation!(
                "{} feature names for {} columns",
                feature_names.len(),
                values.ncols()
            ));
        }
        let mut seen = HashSet::new();
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(validation!("duplicate sample_id {id}"));
            }
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(validation!("duplicate feature name {name}"));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            // column-major storage
            let (row, col) = (pos % n, pos / n);
            return Err(validation!(
                "non-finite value at row {}, column {}",
                row + 1,
                feature_names[col]
            ));
        }
        Ok(FeatureMatrix {
            sample_ids,
            subject_ids,
            dataset_tags,
            labels,
            feature_names,
            values,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn dataset_tags(&self) -> &[String] {
        &self.dataset_tags
    }

    pub fn labels(&self) -> &[Diagnosis] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn sample_index(&self, sample_id: &str) -> Option<usize> {
        self.sample_ids.iter().position(|s| s == sample_id)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|s| s == name)
    }

    /// Row `i` as an owned vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Row-major copy of the values.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (n, p) = self.values.shape();
        let mut out = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                out.push(self.values[(i, j)]);
            }
        }
        out
    }

    /// Same metadata, new values. The column count may differ.
    pub fn with_values(&self, feature_names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        FeatureMatrix::new(
            self.sample_ids.clone(),
            self.subject_ids.clone(),
            self.dataset_tags.clone(),
            self.labels.clone(),
            feature_names,
            values,
        )
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let pick = |v: &Vec<String>| rows.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let values = DMatrix::from_fn(rows.len(), self.n_features(), |i, j| self.values[(rows[i], j)]);
        FeatureMatrix {
            sample_ids: pick(&self.sample_ids),
            subject_ids: pick(&self.subject_ids),
            dataset_tags: pick(&self.dataset_tags),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            values,
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let values = DMatrix::from_fn(self.n_samples(), cols.len(), |i, j| self.values[(i, cols[j])]);
        FeatureMatrix {
            sample_ids: self.sample_ids.clone(),
            subject_ids: self.subject_ids.clone(),
            dataset_tags: self.dataset_tags.clone(),
            labels: self.labels.clone(),
            feature_names: cols.iter().map(|&j| self.feature_names[j].clone()).collect(),
            values,
        }
    }

    /// Selects columns by name, in the order given.
    pub fn select_features(&self, names: &[String]) -> Result<FeatureMatrix> {
        let cols = names
            .iter()
            .map(|n| {
                self.feature_index(n)
                    .ok_or_else(|| validation!("feature {n} not present in matrix"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_columns(&cols))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let schema = MatrixSchema::default();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![schema.sample_id, schema.subject_id, schema.dataset, schema.label];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n_samples() {
            let mut rec = vec![
                self.sample_ids[i].clone(),
                self.subject_ids[i].clone(),
                self.dataset_tags[i].clone(),
                self.labels[i].to_string(),
            ];
            rec.extend((0..self.n_features()).map(|j| self.values[(i, j)].to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Reads a feature-matrix CSV.
pub fn load_matrix(path: &Path, schema: &MatrixSchema) -> Result<FeatureMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_matrix(file, schema)
}

pub fn read_matrix<R: std::io::Read>(reader: R, schema: &MatrixSchema) -> Result<FeatureMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected = [&schema.sample_id, &schema.subject_id, &schema.dataset, &schema.label];
    for (i, name) in expected.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(validation!(
                "header column {} must be '{}', found '{}'",
                i + 1,
                name,
                header.get(i).map(String::as_str).unwrap_or("")
            ));
        }
    }
    let feature_names = header[4..].to_vec();

    let mut sample_ids = Vec::new();
    let mut subject_ids = Vec::new();
    let mut dataset_tags = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut seen = HashSet::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = row + 1;
        if rec.len() != header.len() {
            return Err(validation!(
                "row {row_no}: expected {} cells, found {}",
                header.len(),
                rec.len()
            ));
        }
        let sid = rec[0].trim().to_string();
        if !seen.insert(sid.clone()) {
            return Err(validation!("duplicate sample_id {sid}"));
        }
        sample_ids.push(sid);
        subject_ids.push(rec[1].trim().to_string());
        dataset_tags.push(rec[2].trim().to_string());
        labels.push(
            rec[3]
                .parse::<Diagnosis>()
                .map_err(|e| validation!("row {row_no}: {e}"))?,
        );
        for (j, cell) in rec.iter().skip(4).enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| {
                if cell.is_empty() {
                    validation!("row {row_no}, column {}: missing value", feature_names[j])
                } else {
                    validation!("row {row_no}, column {}: non-numeric value '{cell}'", feature_names[j])
                }
            })?;
            if !v.is_finite() {
                return Err(validation!(
                    "row {row_no}, column {}: non-finite value '{cell}'",
                    feature_names[j]
                ));
            }
            data.push(v);
        }
    }
    let n = sample_ids.len();
    let values = DMatrix::from_row_slice(n, feature_names.len(), &data);
    FeatureMatrix::new(sample_ids, subject_ids, dataset_tags, labels, feature_names, values)
}

/// Feature name to category.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryTaxonomy {
    mapping: BTreeMap<String, Category>,
}

impl CategoryTaxonomy {
    pub fn new(mapping: BTreeMap<String, Category>) -> Self {
        CategoryTaxonomy { mapping }
    }

    pub fn get(&self, feature: &str) -> Option<Category> {
        self.mapping.get(feature).copied()
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Category)> {
        self.mapping.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Fails with the first matrix feature lacking a category.
    pub fn check_covers(&self, matrix: &FeatureMatrix) -> Result<()> {
        match matrix.feature_names().iter().find(|f| !self.mapping.contains_key(*f)) {
            Some(f) => Err(validation!("uncategorized feature: {f}")),
            None => Ok(()),
        }
    }

    /// Restricted to the features of `matrix`.
    pub fn restricted_to(&self, matrix: &FeatureMatrix) -> Result<CategoryTaxonomy> {
        self.check_covers(matrix)?;
        Ok(CategoryTaxonomy {
            mapping: matrix
                .feature_names()
                .iter()
                .map(|f| (f.clone(), self.mapping[f]))
                .collect(),
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.mapping)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Reads a JSON object mapping feature names to category strings and checks
/// that every feature of `matrix` is covered.
pub fn load_category_map(path: &Path, matrix: &FeatureMatrix) -> Result<CategoryTaxonomy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_category_map(&text, matrix)
}

pub fn parse_category_map(text: &str, matrix: &FeatureMatrix) -> Result<CategoryTaxonomy> {
    let raw: BTreeMap<String, String> = serde_json::from_str(text)?;
    let mut mapping = BTreeMap::new();
    for (feature, cat) in raw {
        let c: Category = cat.parse()?;
        mapping.insert(feature, c);
    }
    let taxonomy = CategoryTaxonomy { mapping };
    taxonomy.check_covers(matrix)?;
    Ok(taxonomy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedDrop {
    pub kept: String,
    pub dropped: String,
    pub r: f64,
}

/// Everything [`preprocess`] did, plus what is needed to replay it on new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub corr_threshold: f64,
    pub dropped_constant: Vec<String>,
    pub dropped_correlated: Vec<CorrelatedDrop>,
    /// Retained features in output order.
    pub retained: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl PreprocessReport {
    /// Applies the fitted column selection and standardization to another
    /// matrix with the same raw features (e.g. a held-out fold).
    pub fn apply(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        let selected = matrix.select_features(&self.retained)?;
        let mut values = selected.values().clone();
        for (j, mut col) in values.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = (*v - self.means[j]) / self.stds[j];
            }
        }
        selected.with_values(self.retained.clone(), values)
    }
}

/// Population mean and standard deviation of a column.
fn mean_std(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Drops constant columns, standardizes with population statistics, then
/// drops the later column of every pair with |r| above `corr_threshold`.
pub fn preprocess(matrix: &FeatureMatrix, corr_threshold: f64) -> Result<(FeatureMatrix, PreprocessReport)> {
    if !(corr_threshold > 0.0 && corr_threshold <= 1.0) {
        return Err(invalid!("corr_threshold must lie in (0, 1], got {corr_threshold}"));
    }
    let n = matrix.n_samples();
    if n == 0 {
        return Err(validation!("matrix has no samples"));
    }
    let values = matrix.values();

    let mut dropped_constant = Vec::new();
    let mut kept = Vec::new();
    let mut stats = Vec::new();
    for (j, name) in matrix.feature_names().iter().enumerate() {
        let col: Vec<f64> = values.column(j).iter().copied().collect();
        let (mean, std) = mean_std(&col);
        if std < CONSTANT_STD_EPS {
            dropped_constant.push(name.clone());
        } else {
            kept.push(j);
            stats.push((mean, std));
        }
    }
    if kept.is_empty() {
        return Err(validation!("all feature columns are constant"));
    }

    let standardized: Vec<Vec<f64>> = kept
        .iter()
        .zip(&stats)
        .map(|(&j, &(mean, std))| values.column(j).iter().map(|v| (v - mean) / std).collect())
        .collect();

    let m = kept.len();
    let mut drop = vec![false; m];
    let mut dropped_correlated = Vec::new();
    for a in 0..m {
        if drop[a] {
            continue;
        }
        for b in (a + 1)..m {
            if drop[b] {
                continue;
            }
            let r = pearson_standardized(&standardized[a], &standardized[b]);
            if r.abs() > corr_threshold {
                drop[b] = true;
                dropped_correlated.push(CorrelatedDrop {
                    kept: matrix.feature_names()[kept[a]].clone(),
                    dropped: matrix.feature_names()[kept[b]].clone(),
                    r,
                });
            }
        }
    }

    let retained_idx: Vec<usize> = (0..m).filter(|&a| !drop[a]).collect();
    let retained: Vec<String> = retained_idx
        .iter()
        .map(|&a| matrix.feature_names()[kept[a]].clone())
        .collect();
    let out = DMatrix::from_fn(n, retained_idx.len(), |i, c| standardized[retained_idx[c]][i]);
    let report = PreprocessReport {
        corr_threshold,
        dropped_constant,
        dropped_correlated,
        retained: retained.clone(),
        means: retained_idx.iter().map(|&a| stats[a].0).collect(),
        stds: retained_idx.iter().map(|&a| stats[a].1).collect(),
    };
    Ok((matrix.with_values(retained, out)?, report))
}

/// Pearson r of two standardized (population) columns.
fn pearson_standardized(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let r = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n;
    r.clamp(-1.0, 1.0)
}

/// Pearson correlation of two arbitrary columns. Zero when either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    if sa < CONSTANT_STD_EPS || sb < CONSTANT_STD_EPS {
        return 0.0;
    }
    let n = a.len() as f64;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    (cov / (sa * sb)).clamp(-1.0, 1.0)
}
