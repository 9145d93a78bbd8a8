//! Diagnosis classification on all features, on the differentiating
//! categories and on their complement, with subject-grouped cross-validation.

mod folds;
mod metrics;
mod mlp;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use folds::{grouped_kfold_split, subject_majority};
pub use metrics::{confusion_matrix, macro_scores, Scores};
pub use mlp::{Mlp, MlpConfig};

use crate::corpus::{preprocess, Category, CategoryTaxonomy, Diagnosis, FeatureMatrix, DEFAULT_CORR_THRESHOLD};
use crate::error::{invalid, validation, Error, Result};
use crate::stats::paired_t_test;
use crate::util::{derive_seed, mean, sample_std};

/// Labels taking part in the study, in class-index order.
pub const STUDY_LABELS: [Diagnosis; 3] = [Diagnosis::AD, Diagnosis::MCI, Diagnosis::Depr];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureSetName {
    F,
    #[serde(rename = "F_d")]
    Fd,
    #[serde(rename = "F_minus_Fd")]
    FMinusFd,
}

impl FeatureSetName {
    pub const ALL: [FeatureSetName; 3] = [FeatureSetName::F, FeatureSetName::Fd, FeatureSetName::FMinusFd];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSetName::F => "F",
            FeatureSetName::Fd => "F_d",
            FeatureSetName::FMinusFd => "F-F_d",
        }
    }
}

impl fmt::Display for FeatureSetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetSpec {
    pub name: FeatureSetName,
    /// Empty means every category.
    pub categories: Vec<Category>,
    pub resolved_features: Vec<String>,
}

/// Returns `[F, F_d, F-F_d]`.
pub fn build_feature_sets(taxonomy: &CategoryTaxonomy, differentiators: &[Category]) -> Result<[FeatureSetSpec; 3]> {
    if differentiators.is_empty() {
        return Err(validation!("the differentiator category set is empty"));
    }
    let mut diff = differentiators.to_vec();
    diff.sort();
    diff.dedup();
    let rest: Vec<Category> = Category::ALL.into_iter().filter(|c| !diff.contains(c)).collect();
    let all: Vec<String> = taxonomy.iter().map(|(f, _)| f.to_string()).collect();
    let select = |cats: &[Category]| -> Vec<String> {
        taxonomy
            .iter()
            .filter(|(_, c)| cats.contains(c))
            .map(|(f, _)| f.to_string())
            .collect()
    };
    Ok([
        FeatureSetSpec {
            name: FeatureSetName::F,
            categories: Vec::new(),
            resolved_features: all,
        },
        FeatureSetSpec {
            name: FeatureSetName::Fd,
            resolved_features: select(&diff),
            categories: diff,
        },
        FeatureSetSpec {
            name: FeatureSetName::FMinusFd,
            resolved_features: select(&rest),
            categories: rest,
        },
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub n_folds: usize,
    pub mlp: MlpConfig,
    /// Pearson threshold for the per-fold redundant-feature drop.
    pub corr_threshold: f64,
    pub seed: u64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            n_folds: 10,
            mlp: MlpConfig::default(),
            corr_threshold: DEFAULT_CORR_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub test_subject_ids: Vec<String>,
    pub train_subject_ids: Vec<String>,
    pub epochs: usize,
}

impl FoldResult {
    pub fn scores(&self) -> Scores {
        Scores {
            precision: self.macro_precision,
            recall: self.macro_recall,
            f1: self.macro_f1,
            accuracy: self.accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetReport {
    pub spec: FeatureSetSpec,
    pub folds: Vec<FoldResult>,
    pub mean: Scores,
    /// Sample standard deviation across folds.
    pub std: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub a: FeatureSetName,
    pub b: FeatureSetName,
    pub metric: String,
    /// `None` when the fold differences have zero variance.
    pub t: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<Diagnosis>,
    pub n_folds: usize,
    pub seed: u64,
    pub sets: Vec<FeatureSetReport>,
    pub paired_tests: Vec<PairedComparison>,
}

impl ClassificationReport {
    pub fn set(&self, name: FeatureSetName) -> Option<&FeatureSetReport> {
        self.sets.iter().find(|s| s.spec.name == name)
    }

    /// Rows F, F_d, F-F_d; columns precision, recall, F1, accuracy as mean ± std.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8}{:>16}{:>16}{:>16}{:>16}\n",
            "Feature", "Precision", "Recall", "F1", "Accuracy"
        );
        for s in &self.sets {
            out.push_str(&format!("{:<8}", s.spec.name.as_str()));
            for (m, sd) in s.mean.as_array().iter().zip(s.std.as_array()) {
                out.push_str(&format!("{:>16}", format!("{m:.2} ± {sd:.2}")));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "(mean ± sample std over {} subject-grouped folds)\n",
            self.n_folds
        ));
        out
    }
}

/// Runs the grouped cross-validated MLP study on every feature set.
pub fn run_classification_study(
    matrix: &FeatureMatrix,
    taxonomy: &CategoryTaxonomy,
    differentiators: &[Category],
    opts: &StudyOptions,
) -> Result<ClassificationReport> {
    opts.mlp.validate()?;
    let rows: Vec<usize> = (0..matrix.n_samples())
        .filter(|&i| STUDY_LABELS.contains(&matrix.labels()[i]))
        .collect();
    let data = matrix.select_rows(&rows);
    for l in STUDY_LABELS {
        if !data.labels().contains(&l) {
            return Err(validation!("classification needs AD, MCI and Depr samples; {l} is missing"));
        }
    }
    let taxonomy = taxonomy.restricted_to(&data)?;
    let sets = build_feature_sets(&taxonomy, differentiators)?;
    if let Some(empty) = sets.iter().find(|s| s.resolved_features.is_empty()) {
        return Err(validation!("feature set {} has no features", empty.name));
    }
    let y: Vec<usize> = data
        .labels()
        .iter()
        .map(|l| STUDY_LABELS.iter().position(|s| s == l).unwrap())
        .collect();
    let folds = grouped_kfold_split(data.subject_ids(), data.labels(), opts.n_folds, opts.seed)?;
    for f in 0..opts.n_folds {
        for (c, label) in STUDY_LABELS.iter().enumerate() {
            if !(0..y.len()).any(|i| folds[i] != f && y[i] == c) {
                return Err(validation!("training set of fold {f} has no {label} samples"));
            }
        }
    }

    let jobs: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|s| (0..opts.n_folds).map(move |f| (s, f)))
        .collect();
    let results: Vec<FoldResult> = jobs
        .par_iter()
        .map(|&(s, f)| run_fold(&data, &y, &folds, &sets[s], s, f, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::new();
    for (s, spec) in sets.into_iter().enumerate() {
        let folds: Vec<FoldResult> = results[s * opts.n_folds..(s + 1) * opts.n_folds].to_vec();
        let columns: Vec<[f64; 4]> = folds.iter().map(|f| f.scores().as_array()).collect();
        let stat = |k: usize, g: fn(&[f64]) -> f64| g(&columns.iter().map(|c| c[k]).collect::<Vec<_>>());
        reports.push(FeatureSetReport {
            spec,
            mean: Scores::from_array([0, 1, 2, 3].map(|k| stat(k, mean))),
            std: Scores::from_array([0, 1, 2, 3].map(|k| stat(k, sample_std))),
            folds,
        });
    }

    let mut paired_tests = Vec::new();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        for (k, metric) in Scores::NAMES.iter().enumerate() {
            let xa: Vec<f64> = reports[a].folds.iter().map(|f| f.scores().as_array()[k]).collect();
            let xb: Vec<f64> = reports[b].folds.iter().map(|f| f.scores().as_array()[k]).collect();
            let (t, p_value) = match paired_t_test(&xa, &xb) {
                Ok(r) => (Some(r.statistic), Some(r.p_value)),
                Err(Error::Numerical(_)) => (None, None),
                Err(e) => return Err(e),
            };
            paired_tests.push(PairedComparison {
                a: reports[a].spec.name,
                b: reports[b].spec.name,
                metric: metric.to_string(),
                t,
                p_value,
            });
        }
    }

    Ok(ClassificationReport {
        classes: STUDY_LABELS.to_vec(),
        n_folds: opts.n_folds,
        seed: opts.seed,
        sets: reports,
        paired_tests,
    })
}

fn unique_subjects(data: &FeatureMatrix, rows: &[usize]) -> Vec<String> {
    let mut s: Vec<String> = rows.iter().map(|&i| data.subject_ids()[i].clone()).collect();
    s.sort();
    s.dedup();
    s
}

fn run_fold(
    data: &FeatureMatrix,
    y: &[usize],
    folds: &[usize],
    spec: &FeatureSetSpec,
    set_index: usize,
    fold: usize,
    opts: &StudyOptions,
) -> Result<FoldResult> {
    let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != fold).collect();
    let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == fold).collect();
    if train.is_empty() || test.is_empty() {
        return Err(invalid!("fold {fold} is empty"));
    }
    let sub = data.select_features(&spec.resolved_features)?;
    let (train_x, prep) = preprocess(&sub.select_rows(&train), opts.corr_threshold)?;
    let test_x = prep.apply(&sub.select_rows(&test))?;
    let y_train: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let y_test: Vec<usize> = test.iter().map(|&i| y[i]).collect();
    let cfg = MlpConfig {
        seed: derive_seed(opts.seed, &[fold as u64, set_index as u64]),
        ..opts.mlp.clone()
    };
    let net = Mlp::fit(train_x.values(), &y_train, STUDY_LABELS.len(), &cfg)?;
    let pred = net.predict(test_x.values());
    let s = macro_scores(&y_test, &pred, STUDY_LABELS.len());
    Ok(FoldResult {
        fold_index: fold,
        macro_precision: s.precision,
        macro_recall: s.recall,
        macro_f1: s.f1,
        accuracy: s.accuracy,
        test_subject_ids: unique_subjects(data, &test),
        train_subject_ids: unique_subjects(data, &train),
        epochs: net.loss_curve.len(),
    })
}
