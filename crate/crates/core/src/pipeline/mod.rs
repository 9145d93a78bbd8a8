//! Configuration-driven orchestration of the full study.
//!
//! Stages run in a fixed order (preprocess, embed, cluster, explain, stats,
//! classify); each writes its artifacts under the output directory and the
//! manifest is rewritten after every stage.

mod config;
mod report;
mod run;

pub use config::{parse_pair, PairSide, PipelineConfig};
pub use report::{
    table2_text, table3_text, DifferentiatorSource, Differentiators, EmbeddingSummary, ExplanationSummary,
    InputSummary, Manifest, PcaSelection, Stage, StageRecord, StageStatus, StudyReport, Table2Row,
};
pub use run::{run_pipeline, run_stages};
