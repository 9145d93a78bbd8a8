use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{parse_pair, PairSide, PipelineConfig};
use super::report::*;
use crate::classify::{run_classification_study, MlpConfig, StudyOptions};
use crate::cluster::{fit_kmeans, optimal_k_elbow, silhouette_score, ClusterAssignment};
use crate::corpus::{load_category_map, load_matrix, preprocess, Category, CategoryTaxonomy, Diagnosis, FeatureMatrix};
use crate::dimred::{
    fit_lda, fit_pca, fit_tsne, fit_umap, parallel_analysis, select_informative_components, tune_embedding, Embedding,
    Method, TsneParams, TuneGrid, UmapParams,
};
use crate::error::{validation, Error, Result};
use crate::explain::{
    category_frequency_vector, explain_many, select_explanation_cohort, CategoryFrequencyVector, CohortRequest,
    ExplainOptions, LocalExplanation, MIN_GROUP_SIZE,
};
use crate::plot::{render_elbow_plot, render_embedding_plot, render_explanation_panel, Coloring};
use crate::stats::{kruskal_by_category, mann_whitney_by_category, GroupVectors, StatsTable, ALPHA};
use crate::util::derive_seed;

// Seed streams; method-level streams also carry the method's position in Method::ALL.
const SEED_PCA_NOISE: u64 = 0;
const SEED_EMBED: u64 = 1;
const SEED_CLUSTER: u64 = 2;
const SEED_COHORT: u64 = 3;
const SEED_EXPLAIN: u64 = 4;
const SEED_CLASSIFY: u64 = 5;

/// Candidate PCA components when parallel analysis retains none.
const PCA_FALLBACK_COMPONENTS: usize = 2;

/// Runs every stage.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<StudyReport> {
    run_stages(cfg, &Stage::ALL)
}

/// Validates the config and inputs, then runs the requested stages in order.
/// Config and input errors surface unwrapped; failures inside a stage come
/// back as [`Error::Stage`] after the manifest records them.
pub fn run_stages(cfg: &PipelineConfig, stages: &[Stage]) -> Result<StudyReport> {
    cfg.validate()?;
    let matrix = load_matrix(&cfg.matrix, &cfg.schema())?;
    let taxonomy = load_category_map(&cfg.categories, &matrix)?;
    for p in &cfg.stats_pairs {
        parse_pair(p)?;
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    let mut run = Run::new(cfg, matrix, taxonomy, stages);
    run.write_manifest()?;
    for stage in Stage::ALL {
        if !stages.contains(&stage) {
            continue;
        }
        log::info!("stage {}", stage.as_str());
        match run.exec(stage) {
            Ok(()) => {
                run.manifest.set(stage, StageStatus::Complete, None);
                run.report.completed_stages.push(stage);
                run.write_manifest()?;
            }
            Err(e) => {
                run.manifest.set(stage, StageStatus::Failed, Some(e.to_string()));
                run.write_manifest()?;
                return Err(e.in_stage(stage.as_str()));
            }
        }
    }
    run.finish()?;
    Ok(run.report)
}

struct MethodState {
    embedding: Embedding,
    assignment: Option<ClusterAssignment>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    matrix: FeatureMatrix,
    taxonomy: CategoryTaxonomy,
    preprocessed: Option<FeatureMatrix>,
    methods: BTreeMap<Method, MethodState>,
    cohort_groups: BTreeMap<String, Vec<String>>,
    vectors: BTreeMap<String, CategoryFrequencyVector>,
    manifest: Manifest,
    report: StudyReport,
}

fn method_index(m: Method) -> u64 {
    Method::ALL.iter().position(|&x| x == m).unwrap_or(0) as u64
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

impl<'a> Run<'a> {
    fn new(cfg: &'a PipelineConfig, matrix: FeatureMatrix, taxonomy: CategoryTaxonomy, stages: &[Stage]) -> Self {
        let mut label_counts = BTreeMap::new();
        for l in matrix.labels() {
            *label_counts.entry(l.to_string()).or_insert(0) += 1;
        }
        let n_subjects = matrix.subject_ids().iter().collect::<BTreeSet<_>>().len();
        let report = StudyReport {
            seed: cfg.seed,
            config: cfg.clone(),
            completed_stages: Vec::new(),
            input: InputSummary {
                n_samples: matrix.n_samples(),
                n_features: matrix.n_features(),
                n_subjects,
                label_counts,
            },
            preprocess: None,
            pca_selection: None,
            embeddings: Vec::new(),
            table2: Vec::new(),
            explanation: None,
            table3: None,
            differentiators: None,
            table4: None,
            figures: Vec::new(),
        };
        Run {
            cfg,
            out: cfg.out_dir.clone(),
            matrix,
            taxonomy,
            preprocessed: None,
            methods: BTreeMap::new(),
            cohort_groups: BTreeMap::new(),
            vectors: BTreeMap::new(),
            manifest: Manifest::new(stages),
            report,
        }
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.out.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        if !self.manifest.artifacts.iter().any(|a| a == rel) {
            self.manifest.artifacts.push(rel.to_string());
        }
        Ok(p)
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let p = self.path(rel)?;
        write_text(&p, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel)?;
        write_text(&p, text)
    }

    fn figure(&mut self, rel: &str) -> Result<PathBuf> {
        self.report.figures.push(rel.to_string());
        self.path(rel)
    }

    fn write_manifest(&self) -> Result<()> {
        let p = self.out.join("manifest.json");
        write_text(&p, &(serde_json::to_string_pretty(&self.manifest)? + "\n"))
    }

    fn exec(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Preprocess => self.preprocess(),
            Stage::Embed => self.embed(),
            Stage::Cluster => self.cluster(),
            Stage::Explain => self.explain(),
            Stage::Stats => self.stats(),
            Stage::Classify => self.classify(),
        }
    }

    fn preprocessed(&self) -> Result<&FeatureMatrix> {
        self.preprocessed
            .as_ref()
            .ok_or_else(|| validation!("this stage needs the preprocess stage"))
    }

    fn preprocess(&mut self) -> Result<()> {
        let (m, report) = preprocess(&self.matrix, self.cfg.corr_threshold)?;
        log::info!(
            "kept {} of {} features ({} constant, {} correlated dropped)",
            m.n_features(),
            self.matrix.n_features(),
            report.dropped_constant.len(),
            report.dropped_correlated.len()
        );
        self.write_json("preprocess.json", &report)?;
        let p = self.path("preprocessed.csv")?;
        m.write_csv(&p)?;
        self.report.preprocess = Some(report);
        self.preprocessed = Some(m);
        Ok(())
    }

    fn embed(&mut self) -> Result<()> {
        let m = self.preprocessed()?.clone();
        let cfg = self.cfg;
        for &method in &cfg.methods {
            let seed = derive_seed(cfg.seed, &[SEED_EMBED, method_index(method)]);
            log::info!("embedding with {method}");
            let (embedding, tuning) = match method {
                Method::Pca => {
                    let (emb, sel) = self.fit_pca_selected(&m)?;
                    self.write_json("pca_selection.json", &sel)?;
                    self.report.pca_selection = Some(sel);
                    (emb, None)
                }
                Method::Lda => {
                    let classes = m.labels().iter().collect::<BTreeSet<_>>().len();
                    let n = cfg.lda_n_components.unwrap_or(classes.saturating_sub(1));
                    let (_, mut emb) = fit_lda(&m, m.labels(), n)?;
                    emb.seed = seed;
                    (emb, None)
                }
                Method::Tsne => {
                    let base = TsneParams {
                        perplexity: cfg.tsne_perplexity,
                        n_components: cfg.tsne_n_components,
                        iterations: cfg.tsne_iterations,
                        seed,
                        ..TsneParams::default()
                    };
                    if cfg.tsne_perplexity_grid.is_empty() {
                        (fit_tsne(&m, &base)?, None)
                    } else {
                        let grid = TuneGrid::Tsne {
                            perplexity: cfg.tsne_perplexity_grid.clone(),
                            n_components: vec![cfg.tsne_n_components],
                            base,
                        };
                        let t = tune_embedding(&m, &grid, cfg.silhouette_k, seed)?;
                        (t.embedding, Some(t.scores))
                    }
                }
                Method::Umap => {
                    let base = UmapParams {
                        n_neighbors: cfg.umap_n_neighbors,
                        min_dist: cfg.umap_min_dist,
                        n_components: cfg.umap_n_components,
                        epochs: cfg.umap_epochs,
                        seed,
                        ..UmapParams::default()
                    };
                    if cfg.umap_n_neighbors_grid.is_empty() && cfg.umap_min_dist_grid.is_empty() {
                        (fit_umap(&m, &base)?, None)
                    } else {
                        let grid = TuneGrid::Umap {
                            n_neighbors: grid_or(&cfg.umap_n_neighbors_grid, cfg.umap_n_neighbors),
                            min_dist: grid_or(&cfg.umap_min_dist_grid, cfg.umap_min_dist),
                            n_components: vec![cfg.umap_n_components],
                            base,
                        };
                        let t = tune_embedding(&m, &grid, cfg.silhouette_k, seed)?;
                        (t.embedding, Some(t.scores))
                    }
                }
            };
            let rel = format!("embeddings/{}.csv", method.slug());
            if let Some(scores) = &tuning {
                self.write_json(&format!("tuning/{}.json", method.slug()), scores)?;
            }
            let p = self.path(&rel)?;
            embedding.write(&p)?;
            let sidecar = Embedding::sidecar_path(Path::new(&rel));
            self.path(&sidecar.to_string_lossy())?;
            let fig = format!("figures/{}_labels.svg", method.slug());
            let fp = self.figure(&fig)?;
            render_embedding_plot(
                &embedding,
                Coloring::Diagnosis(m.labels()),
                &format!("{method} embedding by diagnosis"),
                &fp,
            )?;
            self.report.embeddings.push(EmbeddingSummary {
                method,
                n_components: embedding.dim(),
                hyperparameters: embedding.hyperparameters.clone(),
                path: rel,
                tuning,
            });
            self.methods.insert(method, MethodState { embedding, assignment: None });
        }
        Ok(())
    }

    /// Parallel analysis picks the candidate count; components without a
    /// strong loading are then dropped from the embedding.
    fn fit_pca_selected(&self, m: &FeatureMatrix) -> Result<(Embedding, PcaSelection)> {
        let cfg = self.cfg;
        let max = m.n_samples().saturating_sub(1).min(m.n_features());
        let (retained, candidates) = match cfg.pca_n_components {
            Some(n) => (n, n),
            None => {
                let seed = derive_seed(cfg.seed, &[SEED_PCA_NOISE]);
                let pa = parallel_analysis(m, cfg.pca_mc_reps, cfg.pca_percentile, seed)?;
                let n = if pa.retained_count == 0 {
                    log::warn!("parallel analysis retained no components; using {PCA_FALLBACK_COMPONENTS}");
                    PCA_FALLBACK_COMPONENTS
                } else {
                    pa.retained_count
                };
                (pa.retained_count, n.min(max))
            }
        };
        let (model, emb) = fit_pca(m, candidates)?;
        let mut selected = select_informative_components(&model, candidates, cfg.pca_loading_threshold)?;
        if selected.is_empty() {
            log::warn!("no component reaches loading {}; keeping all {candidates}", cfg.pca_loading_threshold);
            selected = (0..candidates).collect();
        }
        let mut out = emb.clone();
        out.coords = emb.coords.select_columns(selected.iter());
        out.seed = derive_seed(cfg.seed, &[SEED_EMBED, method_index(Method::Pca)]);
        out.hyperparameters.insert("n_components".into(), selected.len() as f64);
        out.hyperparameters.insert("candidate_components".into(), candidates as f64);
        Ok((
            out,
            PcaSelection {
                mc_reps: cfg.pca_mc_reps,
                percentile: cfg.pca_percentile,
                retained_count: retained,
                candidate_count: candidates,
                loading_threshold: cfg.pca_loading_threshold,
                selected_components: selected,
            },
        ))
    }

    fn cluster(&mut self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(validation!("the cluster stage needs the embed stage"));
        }
        let cfg = self.cfg;
        let ks = cfg.k_values();
        let labels = self.matrix.labels().to_vec();
        let methods: Vec<Method> = cfg.methods.clone();
        for method in methods {
            let seed = derive_seed(cfg.seed, &[SEED_CLUSTER, method_index(method)]);
            let emb = self.methods[&method].embedding.clone();
            let curve = optimal_k_elbow(&emb, &ks, seed)?;
            let assignment = fit_kmeans(&emb, cfg.silhouette_k, seed, cfg.kmeans_restarts)?;
            let silhouette = silhouette_score(&emb, &assignment.labels)?;
            log::info!("{method}: elbow K = {}, silhouette(K = {}) = {silhouette:.4}", curve.chosen_k, cfg.silhouette_k);

            let slug = method.slug();
            self.write_json(&format!("clusters/{slug}_elbow.json"), &curve)?;
            let p = self.path(&format!("clusters/{slug}.csv"))?;
            write_clusters(&p, &emb.sample_ids, &labels, &assignment.labels)?;
            let fp = self.figure(&format!("figures/{slug}_elbow.svg"))?;
            render_elbow_plot(&curve, &format!("{method} elbow"), &fp)?;
            let fp = self.figure(&format!("figures/{slug}_clusters.svg"))?;
            render_embedding_plot(
                &emb,
                Coloring::Cluster(&assignment.labels),
                &format!("{method} K-Means clusters (K = {})", cfg.silhouette_k),
                &fp,
            )?;

            self.report.table2.push(Table2Row {
                method,
                optimal_k: curve.chosen_k,
                optimal_k_is_4: curve.chosen_k == 4,
                silhouette_k: cfg.silhouette_k,
                silhouette,
                embedding: format!("embeddings/{slug}.csv"),
            });
            if let Some(s) = self.methods.get_mut(&method) {
                s.assignment = Some(assignment);
            }
        }
        let text = table2_text(&self.report.table2);
        self.write_text("table2.txt", &text)
    }

    fn explain(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let method = cfg.explain_method;
        let state = self
            .methods
            .get(&method)
            .ok_or_else(|| validation!("the explain stage needs a {method} embedding"))?;
        let assignment = state
            .assignment
            .as_ref()
            .ok_or_else(|| validation!("the explain stage needs the cluster stage"))?;
        let embedding = state.embedding.clone();
        let requests = if cfg.explain_requests.is_empty() {
            default_requests(assignment, self.matrix.labels(), cfg.silhouette_k)
        } else {
            cfg.explain_requests.clone()
        };
        let cohort = select_explanation_cohort(
            assignment,
            self.matrix.sample_ids(),
            self.matrix.labels(),
            &requests,
            derive_seed(cfg.seed, &[SEED_COHORT]),
        )?;
        let opts = ExplainOptions {
            neighborhood_size: cfg.explain_neighborhood,
            kernel_width: cfg.explain_kernel_width,
            ridge_lambda: cfg.explain_ridge_lambda,
            top_m: cfg.explain_top_m,
            strategy: cfg.explain_strategy,
            seed: derive_seed(cfg.seed, &[SEED_EXPLAIN]),
        };
        let ids: Vec<String> = cohort.sample_ids().map(str::to_string).collect();
        let m = self.preprocessed()?;
        let explanations = explain_many(m, &embedding, &ids, &opts)?;
        let by_id: BTreeMap<&str, &LocalExplanation> =
            explanations.iter().map(|e| (e.instance_id.as_str(), e)).collect();

        let mut rows = Vec::new();
        let mut groups = BTreeMap::new();
        for (name, members) in &cohort.groups {
            let mut ids = Vec::new();
            for mem in members {
                let v = category_frequency_vector(by_id[mem.sample_id.as_str()], &self.taxonomy)?;
                rows.push((name.clone(), v.clone()));
                self.vectors.insert(mem.sample_id.clone(), v);
                ids.push(mem.sample_id.clone());
            }
            groups.insert(name.clone(), ids);
        }

        self.write_json("explanations.json", &explanations)?;
        let p = self.path("frequency_vectors.csv")?;
        write_frequency_vectors(&p, &rows)?;
        for (name, members) in &cohort.groups {
            if let Some(first) = members.first() {
                let fp = self.figure(&format!("figures/explanation_{}.svg", sanitize(name)))?;
                render_explanation_panel(by_id[first.sample_id.as_str()], &embedding, &fp)?;
            }
        }
        self.cohort_groups = groups.clone();
        self.report.explanation = Some(ExplanationSummary {
            method,
            k: cfg.silhouette_k,
            requests,
            groups,
            warnings: cohort.warnings,
            n_instances: explanations.len(),
        });
        Ok(())
    }

    fn group_vectors(&self, side: &PairSide) -> Option<GroupVectors> {
        let names: Vec<&String> = match side {
            PairSide::Label(d) => {
                let prefix = format!("{d}@");
                self.cohort_groups.keys().filter(|k| k.starts_with(&prefix)).collect()
            }
            PairSide::Group(g) => self.cohort_groups.keys().filter(|k| *k == g).collect(),
        };
        if names.is_empty() {
            return None;
        }
        let vectors = names
            .iter()
            .flat_map(|n| &self.cohort_groups[*n])
            .map(|id| self.vectors[id].counts)
            .collect();
        Some(GroupVectors {
            name: side.name(),
            vectors,
        })
    }

    fn stats(&mut self) -> Result<()> {
        if self.cohort_groups.is_empty() {
            return Err(validation!("the stats stage needs the explain stage"));
        }
        let groups: Vec<GroupVectors> = self
            .cohort_groups
            .keys()
            .filter_map(|g| self.group_vectors(&PairSide::Group(g.clone())))
            .collect();
        if groups.len() < 2 {
            return Err(validation!("the omnibus test needs at least 2 explanation groups"));
        }
        let omnibus = kruskal_by_category(&groups)?;

        let explicit = !self.cfg.stats_pairs.is_empty();
        let pairs: Vec<(PairSide, PairSide)> = if explicit {
            self.cfg.stats_pairs.iter().map(|p| parse_pair(p)).collect::<Result<_>>()?
        } else {
            self.default_pairs()
        };
        let mut rows = Vec::new();
        for (a, b) in &pairs {
            match (self.group_vectors(a), self.group_vectors(b)) {
                (Some(ga), Some(gb)) => rows.push(mann_whitney_by_category(&ga, &gb)?),
                _ if explicit => {
                    return Err(validation!(
                        "stats pair {}:{} names a group with no explained samples",
                        a.name(),
                        b.name()
                    ))
                }
                _ => log::warn!("skipping {} vs {}: no explained samples", a.name(), b.name()),
            }
        }
        let table = StatsTable {
            alpha: ALPHA,
            omnibus,
            pairs: rows,
        };
        self.write_json("table3.json", &table)?;
        self.write_text("table3.txt", &table3_text(&table))?;
        self.report.table3 = Some(table);
        Ok(())
    }

    /// AD vs HC, Depr vs HC, every pair of HC groups, AD vs Depr.
    fn default_pairs(&self) -> Vec<(PairSide, PairSide)> {
        use PairSide::{Group, Label};
        let mut pairs = vec![
            (Label(Diagnosis::AD), Label(Diagnosis::HC)),
            (Label(Diagnosis::Depr), Label(Diagnosis::HC)),
        ];
        let hc: Vec<&String> = self.cohort_groups.keys().filter(|k| k.starts_with("HC@")).collect();
        for i in 0..hc.len() {
            for j in i + 1..hc.len() {
                pairs.push((Group(hc[i].clone()), Group(hc[j].clone())));
            }
        }
        pairs.push((Label(Diagnosis::AD), Label(Diagnosis::Depr)));
        pairs
    }

    fn differentiators(&self) -> Result<Differentiators> {
        if !self.cfg.classify_differentiators.is_empty() {
            return Ok(Differentiators {
                source: DifferentiatorSource::Config,
                categories: self.cfg.classify_differentiators.clone(),
            });
        }
        let table = self.report.table3.as_ref().ok_or_else(|| {
            validation!("no differentiators: run the stats stage or set classify_differentiators")
        })?;
        let row = table.pairs.iter().find(|r| r.pair == "AD vs Depr").ok_or_else(|| {
            validation!("no AD vs Depr comparison in the stats table; set classify_differentiators")
        })?;
        let categories: Vec<Category> = row.significant_categories();
        if categories.is_empty() {
            return Err(validation!(
                "no category separates AD from Depr at p < {ALPHA}; set classify_differentiators to choose F_d"
            ));
        }
        Ok(Differentiators {
            source: DifferentiatorSource::Stats,
            categories,
        })
    }

    fn classify(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let diffs = self.differentiators()?;
        log::info!(
            "differentiators: {}",
            diffs.categories.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
        );
        let opts = StudyOptions {
            n_folds: cfg.classify_folds,
            mlp: MlpConfig {
                hidden_layers: cfg.mlp_hidden.clone(),
                learning_rate: cfg.mlp_learning_rate,
                l2: cfg.mlp_l2,
                batch_size: cfg.mlp_batch_size,
                max_epochs: cfg.mlp_max_epochs,
                ..MlpConfig::default()
            },
            corr_threshold: cfg.corr_threshold,
            seed: derive_seed(cfg.seed, &[SEED_CLASSIFY]),
        };
        let report = run_classification_study(&self.matrix, &self.taxonomy, &diffs.categories, &opts)?;
        self.write_text("table4.txt", &report.to_table())?;
        self.report.differentiators = Some(diffs);
        self.report.table4 = Some(report);
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.report.figures.sort();
        let report = self.report.clone();
        self.write_json("report.json", &report)?;
        self.write_manifest()
    }
}

/// Per label, the cluster holding most of its samples; HC additionally gets
/// every other cluster holding enough HC samples to form a group.
fn default_requests(assignment: &ClusterAssignment, labels: &[Diagnosis], k: usize) -> Vec<CohortRequest> {
    let mut counts = vec![[0usize; 4]; k];
    for (&c, l) in assignment.labels.iter().zip(labels) {
        counts[c][l.index()] += 1;
    }
    let home = |d: Diagnosis| (0..k).max_by_key(|&c| (counts[c][d.index()], std::cmp::Reverse(c)));
    let mut out = Vec::new();
    for c in 0..k {
        if counts[c][Diagnosis::HC.index()] >= MIN_GROUP_SIZE {
            out.push(CohortRequest::new(Diagnosis::HC, c));
        }
    }
    for d in [Diagnosis::AD, Diagnosis::Depr] {
        if let Some(c) = home(d) {
            if counts[c][d.index()] > 0 {
                out.push(CohortRequest::new(d, c));
            }
        }
    }
    out
}

fn grid_or<T: Clone>(grid: &[T], fixed: T) -> Vec<T> {
    if grid.is_empty() {
        vec![fixed]
    } else {
        grid.to_vec()
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_clusters(path: &Path, ids: &[String], labels: &[Diagnosis], clusters: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "label", "cluster"])?;
    for ((id, l), c) in ids.iter().zip(labels).zip(clusters) {
        w.write_record([id.as_str(), l.as_str(), &c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_frequency_vectors(path: &Path, rows: &[(String, CategoryFrequencyVector)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["instance_id".to_string(), "group".to_string()];
    header.extend(Category::ALL.iter().map(|c| c.as_str().to_string()));
    w.write_record(&header)?;
    for (group, v) in rows {
        let mut rec = vec![v.instance_id.clone(), group.clone()];
        rec.extend(v.counts.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_requests_follow_label_homes() {
        let labels: Vec<Diagnosis> = [[Diagnosis::HC; 12], [Diagnosis::AD; 12], [Diagnosis::Depr; 12]].concat();
        let clusters: Vec<usize> = (0..36)
            .map(|i| match i {
                0..=5 => 0,
                6..=11 => 2,
                12..=23 => 1,
                _ => 2,
            })
            .collect();
        let a = ClusterAssignment {
            labels: clusters,
            centroids: nalgebra::DMatrix::zeros(3, 2),
            inertia: 0.0,
            k: 3,
            seed: 0,
            inertia_trace: vec![],
        };
        let r = default_requests(&a, &labels, 3);
        let names: Vec<String> = r.iter().map(CohortRequest::group_name).collect();
        assert_eq!(names, ["HC@0", "HC@2", "AD@1", "Depr@2"]);
    }
}
