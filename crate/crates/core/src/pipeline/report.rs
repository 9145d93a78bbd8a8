use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::classify::ClassificationReport;
use crate::corpus::{Category, PreprocessReport};
use crate::dimred::{GridPoint, Method};
use crate::explain::CohortRequest;
use crate::stats::{StatsTable, TableRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Preprocess,
    Embed,
    Cluster,
    Explain,
    Stats,
    Classify,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Preprocess,
        Stage::Embed,
        Stage::Cluster,
        Stage::Explain,
        Stage::Stats,
        Stage::Classify,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Explain => "explain",
            Stage::Stats => "stats",
            Stage::Classify => "classify",
        }
    }

    /// This stage and every stage before it.
    pub fn through(self) -> Vec<Stage> {
        Stage::ALL.iter().copied().filter(|s| *s <= self).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Complete,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Completion state of a run, rewritten after every stage so a failed run
/// still describes the artifacts it left behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<StageRecord>,
    /// Paths relative to the output directory, in write order.
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(requested: &[Stage]) -> Self {
        Manifest {
            stages: Stage::ALL
                .iter()
                .map(|&stage| StageRecord {
                    stage,
                    status: if requested.contains(&stage) {
                        StageStatus::Pending
                    } else {
                        StageStatus::Skipped
                    },
                    error: None,
                })
                .collect(),
            artifacts: Vec::new(),
        }
    }

    pub fn set(&mut self, stage: Stage, status: StageStatus, error: Option<String>) {
        if let Some(r) = self.stages.iter_mut().find(|r| r.stage == stage) {
            r.status = status;
            r.error = error;
        }
    }

    pub fn status(&self, stage: Stage) -> StageStatus {
        self.stages
            .iter()
            .find(|r| r.stage == stage)
            .map_or(StageStatus::Skipped, |r| r.status)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_subjects: usize,
    pub label_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSelection {
    pub mc_reps: usize,
    pub percentile: f64,
    /// Components whose eigenvalue beat the noise percentile.
    pub retained_count: usize,
    /// Candidate count actually used (retained, configured, or the fallback).
    pub candidate_count: usize,
    pub loading_threshold: f64,
    /// Zero-based indices of the components kept in the PCA embedding.
    pub selected_components: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSummary {
    pub method: Method,
    pub n_components: usize,
    pub hyperparameters: BTreeMap<String, f64>,
    /// Relative path of the coordinates CSV.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<Vec<GridPoint>>,
}

/// One row of the method comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub method: Method,
    pub optimal_k: usize,
    pub optimal_k_is_4: bool,
    pub silhouette_k: usize,
    pub silhouette: f64,
    pub embedding: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSummary {
    pub method: Method,
    pub k: usize,
    pub requests: Vec<CohortRequest>,
    /// Group name to explained sample ids.
    pub groups: BTreeMap<String, Vec<String>>,
    pub warnings: Vec<String>,
    pub n_instances: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferentiatorSource {
    /// Significant categories of the AD vs Depr comparison.
    Stats,
    Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Differentiators {
    pub source: DifferentiatorSource,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub seed: u64,
    pub config: PipelineConfig,
    pub completed_stages: Vec<Stage>,
    pub input: InputSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_selection: Option<PcaSelection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embeddings: Vec<EmbeddingSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table2: Vec<Table2Row>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<ExplanationSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table3: Option<StatsTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub differentiators: Option<Differentiators>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table4: Option<ClassificationReport>,
    /// Relative paths, sorted.
    pub figures: Vec<String>,
}

impl StudyReport {
    /// Range violations in silhouettes and p-values; empty when the report is sound.
    pub fn range_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.table2 {
            if !(-1.0..=1.0).contains(&r.silhouette) {
                out.push(format!("{} silhouette {} outside [-1, 1]", r.method, r.silhouette));
            }
            if r.optimal_k_is_4 != (r.optimal_k == 4) {
                out.push(format!("{} optimal-K flag disagrees with K = {}", r.method, r.optimal_k));
            }
        }
        if let Some(t) = &self.table3 {
            for row in std::iter::once(&t.omnibus).chain(&t.pairs) {
                for c in &row.cells {
                    if !(0.0..=1.0).contains(&c.p) {
                        out.push(format!("{} {} p = {} outside [0, 1]", row.pair, c.category, c.p));
                    }
                }
            }
        }
        if let Some(t) = &self.table4 {
            for c in &t.paired_tests {
                if let Some(p) = c.p_value {
                    if !(0.0..=1.0).contains(&p) {
                        out.push(format!("{} vs {} p = {p} outside [0, 1]", c.a, c.b));
                    }
                }
            }
        }
        out
    }
}

pub fn table2_text(rows: &[Table2Row]) -> String {
    let k = rows.first().map_or(4, |r| r.silhouette_k);
    let sil = format!("Silhouette (K = {k})");
    let mut out = format!("{:<8}{:>12}{:>16}{:>22}\n", "Method", "Optimal K", "Optimal K = 4", sil);
    for r in rows {
        let _ = writeln!(
            out,
            "{:<8}{:>12}{:>16}{:>22.4}",
            r.method.as_str(),
            r.optimal_k,
            if r.optimal_k_is_4 { "yes" } else { "no" },
            r.silhouette
        );
    }
    out
}

fn marks_row(out: &mut String, row: &TableRow, label: &str) {
    let _ = write!(out, "{label:<28}");
    for c in &row.cells {
        let _ = write!(out, "{:>6}", if c.significant { "x" } else { "-" });
    }
    out.push('\n');
}

/// Category marks per comparison, `x` where p < alpha.
pub fn table3_text(table: &StatsTable) -> String {
    let mut out = format!("{:<28}", "Compare");
    for k in 1..=Category::COUNT {
        let _ = write!(out, "{:>6}", format!("C{k}"));
    }
    out.push('\n');
    marks_row(&mut out, &table.omnibus, "Kruskal-Wallis (all groups)");
    for row in &table.pairs {
        marks_row(&mut out, row, &row.pair);
    }
    let _ = writeln!(out, "x: p < {}", table.alpha);
    for (k, c) in Category::ALL.iter().enumerate() {
        let _ = writeln!(out, "C{}: {}", k + 1, c.as_str());
    }
    out
}
