use std::path::Path;

use symptomap::pipeline::{run_stages, Manifest, PipelineConfig, Stage, StageStatus};
use symptomap::synth::{generate_cohort, SyntheticSpec};

fn cohort(dir: &Path, per_label: usize) {
    let spec = SyntheticSpec { n_per_label: [per_label; 4], seed: 4, ..SyntheticSpec::default() };
    generate_cohort(&spec).unwrap().write(dir).unwrap();
}

fn config(data: &Path, out: &Path, extra: &[(&str, &str)]) -> PipelineConfig {
    let mut set: Vec<(String, String)> = [
        ("matrix", format!("{:?}", data.join("matrix.csv"))),
        ("categories", format!("{:?}", data.join("categories.json"))),
        ("out_dir", format!("{out:?}")),
        ("seed", "4".into()),
        ("pca_mc_reps", "20".into()),
        ("tsne_iterations", "300".into()),
        ("umap_epochs", "150".into()),
        ("kmeans_restarts", "3".into()),
        ("classify_folds", "4".into()),
        ("mlp_max_epochs", "30".into()),
        ("classify_differentiators", "[\"acoustic\", \"coherence\"]".into()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    set.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    PipelineConfig::load(None, &set).unwrap()
}

fn manifest(out: &Path) -> Manifest {
    serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn full_run_is_complete_sound_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cohort(&data, 40);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let report = run_stages(&config(&data, &a, &[]), &Stage::ALL).unwrap();

    assert_eq!(report.completed_stages, Stage::ALL.to_vec());
    assert_eq!(report.table2.len(), 4);
    for row in &report.table2 {
        assert_eq!(row.optimal_k_is_4, row.optimal_k == 4);
    }
    assert!(report.range_violations().is_empty(), "{:?}", report.range_violations());
    assert!(report.table3.is_some() && report.table4.is_some());
    assert!(!report.figures.is_empty());
    for f in &report.figures {
        assert!(a.join(f).is_file(), "missing figure {f}");
    }
    assert!(manifest(&a).stages.iter().all(|s| s.status == StageStatus::Complete));

    run_stages(&config(&data, &b, &[]), &Stage::ALL).unwrap();
    assert_eq!(std::fs::read(a.join("report.json")).unwrap(), std::fs::read(b.join("report.json")).unwrap());
}

#[test]
fn stage_prefix_yields_a_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cohort(&data, 40);
    let out = dir.path().join("out");
    let report = run_stages(&config(&data, &out, &[]), &Stage::Embed.through()).unwrap();
    assert_eq!(report.completed_stages, vec![Stage::Preprocess, Stage::Embed]);
    assert_eq!(report.embeddings.len(), 4);
    assert!(report.table2.is_empty() && report.table3.is_none() && report.table4.is_none());
    let m = manifest(&out);
    assert_eq!(m.status(Stage::Embed), StageStatus::Complete);
    assert_ne!(m.status(Stage::Cluster), StageStatus::Complete);
}

#[test]
fn missing_input_fails_before_writing_anything() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cohort(&data, 10);
    std::fs::remove_file(data.join("matrix.csv")).unwrap();
    let out = dir.path().join("out");
    let set = vec![
        ("matrix".to_string(), format!("{:?}", data.join("matrix.csv"))),
        ("categories".to_string(), format!("{:?}", data.join("categories.json"))),
        ("out_dir".to_string(), format!("{out:?}")),
        ("seed".to_string(), "1".to_string()),
    ];
    let err = PipelineConfig::load(None, &set)
        .and_then(|cfg| run_stages(&cfg, &Stage::ALL))
        .unwrap_err();
    assert!(err.is_validation(), "{err}");
    assert!(!out.exists());
}

#[test]
fn failing_stage_is_recorded_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    // 40 samples cannot support perplexity 30
    cohort(&data, 10);
    let out = dir.path().join("out");
    let err = run_stages(&config(&data, &out, &[]), &Stage::ALL).unwrap_err();
    assert!(!err.is_validation(), "{err}");
    let m = manifest(&out);
    assert_eq!(m.status(Stage::Preprocess), StageStatus::Complete);
    assert_eq!(m.status(Stage::Embed), StageStatus::Failed);
    let rec = m.stages.iter().find(|s| s.stage == Stage::Embed).unwrap();
    assert!(rec.error.as_deref().is_some_and(|e| !e.is_empty()));
}
