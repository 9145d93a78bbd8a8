//! Local linear explanations of embedding axes and per-category counts of the
//! features that drive them.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::corpus::{Category, CategoryTaxonomy, Diagnosis, FeatureMatrix};
use crate::dimred::Embedding;
use crate::error::{invalid, validation, Error, Result};
use crate::util::{derive_seed, median, rng, squared_distance};

/// Smallest group that may be explained and compared.
pub const MIN_GROUP_SIZE: usize = 5;
pub const DEFAULT_COHORT_COUNT: usize = 10;
pub const MIN_NEIGHBORHOOD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortRequest {
    pub label: Diagnosis,
    pub cluster: usize,
    #[serde(default = "default_count")]
    pub count: usize,
}

fn default_count() -> usize {
    DEFAULT_COHORT_COUNT
}

impl CohortRequest {
    pub fn new(label: Diagnosis, cluster: usize) -> Self {
        CohortRequest {
            label,
            cluster,
            count: DEFAULT_COHORT_COUNT,
        }
    }

    /// Group name, e.g. `HC@0`.
    pub fn group_name(&self) -> String {
        format!("{}@{}", self.label, self.cluster)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortMember {
    pub sample_id: String,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExplanationCohort {
    pub groups: BTreeMap<String, Vec<CohortMember>>,
    pub warnings: Vec<String>,
}

impl ExplanationCohort {
    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.groups.values().flatten().map(|m| m.sample_id.as_str())
    }
}

/// Draws each requested (label, cluster) group uniformly without replacement.
pub fn select_explanation_cohort(
    assignment: &ClusterAssignment,
    sample_ids: &[String],
    labels: &[Diagnosis],
    requests: &[CohortRequest],
    seed: u64,
) -> Result<ExplanationCohort> {
    let n = assignment.labels.len();
    if sample_ids.len() != n || labels.len() != n {
        return Err(invalid!("cluster assignment, sample ids and labels differ in length"));
    }
    let mut cohort = ExplanationCohort::default();
    for (r, req) in requests.iter().enumerate() {
        let name = req.group_name();
        if cohort.groups.contains_key(&name) {
            return Err(validation!("explanation group {name} requested twice"));
        }
        let pool: Vec<usize> = (0..n)
            .filter(|&i| labels[i] == req.label && assignment.labels[i] == req.cluster)
            .collect();
        if pool.len() < MIN_GROUP_SIZE {
            return Err(validation!(
                "group {name} has {} samples; explanation groups need at least {MIN_GROUP_SIZE}",
                pool.len()
            ));
        }
        let mut chosen: Vec<usize> = if pool.len() <= req.count {
            if pool.len() < req.count {
                let msg = format!("group {name}: requested {} samples, only {} available; using all", req.count, pool.len());
                log::warn!("{msg}");
                cohort.warnings.push(msg);
            }
            pool
        } else {
            let mut g = rng(derive_seed(seed, &[r as u64]));
            sample(&mut g, pool.len(), req.count).into_iter().map(|k| pool[k]).collect()
        };
        chosen.sort_unstable();
        cohort.groups.insert(
            name,
            chosen
                .into_iter()
                .map(|i| CohortMember {
                    sample_id: sample_ids[i].clone(),
                    cluster: assignment.labels[i],
                })
                .collect(),
        );
    }
    Ok(cohort)
}

/// How the local neighborhood of an instance is formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NeighborhoodStrategy {
    /// Nearest dataset samples in embedding space.
    Nearest,
    /// Gaussian feature perturbations placed in the embedding by
    /// inverse-distance k-NN interpolation over the dataset.
    Perturb { samples: usize, scale: f64, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOptions {
    pub neighborhood_size: usize,
    /// `None` uses the median nonzero neighbor distance.
    pub kernel_width: Option<f64>,
    pub ridge_lambda: f64,
    pub top_m: usize,
    pub strategy: NeighborhoodStrategy,
    pub seed: u64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            neighborhood_size: 50,
            kernel_width: None,
            ridge_lambda: 1e-3,
            top_m: 5,
            strategy: NeighborhoodStrategy::Nearest,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    /// One weight per feature, in matrix column order.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub r2: f64,
    /// Largest |weight| first.
    pub top_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalExplanation {
    pub instance_id: String,
    /// Dataset samples in the neighborhood; empty for the perturbation strategy.
    pub neighborhood_ids: Vec<String>,
    pub kernel_width: f64,
    pub feature_names: Vec<String>,
    pub per_axis: Vec<AxisFit>,
}

impl LocalExplanation {
    pub fn top_features(&self) -> impl Iterator<Item = &str> {
        self.per_axis.iter().flat_map(|a| a.top_features.iter().map(String::as_str))
    }
}

/// Weighted ridge fit with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub r2: f64,
}

/// Solves `(Xc' W Xc + lambda I) b = Xc' W yc` where `Xc`, `yc` are centered
/// on their weighted means. `x` is row-major n x p.
pub fn weighted_ridge(x: &[f64], n: usize, p: usize, y: &[f64], w: &[f64], lambda: f64) -> Result<RidgeFit> {
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Numerical("neighborhood weights sum to zero".into()));
    }
    let mut xm = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            xm[j] += w[i] * x[i * p + j];
        }
    }
    xm.iter_mut().for_each(|v| *v /= wsum);
    if y.iter().all(|&v| v == y[0]) {
        return Ok(RidgeFit {
            coef: vec![0.0; p],
            intercept: y[0],
            r2: 0.0,
        });
    }
    let ym = w.iter().zip(y).map(|(wi, yi)| wi * yi).sum::<f64>() / wsum;

    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            row[j] = x[i * p + j] - xm[j];
        }
        let yc = y[i] - ym;
        for j in 0..p {
            let wr = w[i] * row[j];
            rhs[j] += wr * yc;
            for k in j..p {
                a[(j, k)] += wr * row[k];
            }
        }
    }
    for j in 0..p {
        a[(j, j)] += lambda;
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
    }
    let coef = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular local regression system".into()))?,
    };
    let coef: Vec<f64> = coef.iter().copied().collect();
    let intercept = ym - coef.iter().zip(&xm).map(|(b, m)| b * m).sum::<f64>();

    let mut sse = 0.0;
    let mut sst = 0.0;
    for i in 0..n {
        let pred = intercept + (0..p).map(|j| coef[j] * x[i * p + j]).sum::<f64>();
        sse += w[i] * (y[i] - pred).powi(2);
        sst += w[i] * (y[i] - ym).powi(2);
    }
    let r2 = if sst > 0.0 { (1.0 - sse / sst).clamp(0.0, 1.0) } else { 0.0 };
    Ok(RidgeFit { coef, intercept, r2 })
}

fn top_by_magnitude(weights: &[f64], names: &[String], m: usize) -> Vec<String> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
    order.into_iter().take(m).map(|j| names[j].clone()).collect()
}

/// Indices of the `k` rows of `points` closest to `target`, nearest first,
/// with their Euclidean distances.
fn nearest(points: &[f64], n: usize, d: usize, target: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..n)
        .map(|i| (i, squared_distance(&points[i * d..(i + 1) * d], target).sqrt()))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Fits a weighted ridge model per embedding axis around one instance.
pub fn explain_local(
    matrix: &FeatureMatrix,
    embedding: &Embedding,
    instance_id: &str,
    opts: &ExplainOptions,
) -> Result<LocalExplanation> {
    if opts.neighborhood_size < MIN_NEIGHBORHOOD {
        return Err(invalid!(
            "neighborhood_size must be at least {MIN_NEIGHBORHOOD}, got {}",
            opts.neighborhood_size
        ));
    }
    if opts.top_m < 1 {
        return Err(invalid!("top_m must be at least 1"));
    }
    if !(opts.ridge_lambda >= 0.0) {
        return Err(invalid!("ridge_lambda must be non-negative"));
    }
    if embedding.sample_ids != matrix.sample_ids() {
        return Err(invalid!("embedding and matrix samples differ"));
    }
    let n = matrix.n_samples();
    if opts.neighborhood_size > n {
        return Err(invalid!("neighborhood_size {} exceeds the {n} samples", opts.neighborhood_size));
    }
    let idx = matrix
        .sample_index(instance_id)
        .ok_or_else(|| invalid!("unknown instance id '{instance_id}'"))?;
    let p = matrix.n_features();
    let dim = embedding.dim();
    let feats = matrix.to_row_major();
    let emb = embedding.row_major();
    let here = &emb[idx * dim..(idx + 1) * dim];

    let (x, y, dists, neighborhood_ids) = match opts.strategy {
        NeighborhoodStrategy::Nearest => {
            let nb = nearest(&emb, n, dim, here, opts.neighborhood_size);
            let mut x = Vec::with_capacity(nb.len() * p);
            let mut y = Vec::with_capacity(nb.len() * dim);
            for &(i, _) in &nb {
                x.extend_from_slice(&feats[i * p..(i + 1) * p]);
                y.extend_from_slice(&emb[i * dim..(i + 1) * dim]);
            }
            let ids = nb.iter().map(|&(i, _)| matrix.sample_ids()[i].clone()).collect();
            (x, y, nb.iter().map(|&(_, d)| d).collect::<Vec<_>>(), ids)
        }
        NeighborhoodStrategy::Perturb { samples, scale, k } => {
            if samples < opts.neighborhood_size || k < 1 || k > n || !(scale > 0.0) {
                return Err(invalid!("perturbation needs samples >= neighborhood_size, 1 <= k <= samples, scale > 0"));
            }
            let mut g = rng(derive_seed(opts.seed, &[idx as u64]));
            let origin = &feats[idx * p..(idx + 1) * p];
            let mut x = origin.to_vec();
            let mut y = here.to_vec();
            for _ in 1..samples {
                let z: Vec<f64> = origin
                    .iter()
                    .map(|v| {
                        let e: f64 = StandardNormal.sample(&mut g);
                        v + scale * e
                    })
                    .collect();
                let nb = nearest(&feats, n, p, &z, k);
                let mut pos = vec![0.0; dim];
                if nb[0].1 == 0.0 {
                    pos.copy_from_slice(&emb[nb[0].0 * dim..(nb[0].0 + 1) * dim]);
                } else {
                    let total: f64 = nb.iter().map(|(_, d)| 1.0 / d).sum();
                    for &(i, d) in &nb {
                        for c in 0..dim {
                            pos[c] += emb[i * dim + c] / d / total;
                        }
                    }
                }
                x.extend_from_slice(&z);
                y.extend_from_slice(&pos);
            }
            let m = samples;
            let dists: Vec<f64> = (0..m)
                .map(|i| squared_distance(&y[i * dim..(i + 1) * dim], here).sqrt())
                .collect();
            (x, y, dists, Vec::new())
        }
    };

    let m = dists.len();
    let kernel_width = match opts.kernel_width {
        Some(w) if w > 0.0 => w,
        Some(w) => return Err(invalid!("kernel_width must be positive, got {w}")),
        None => {
            let nonzero: Vec<f64> = dists.iter().copied().filter(|&d| d > 0.0).collect();
            if nonzero.is_empty() {
                1.0
            } else {
                median(&nonzero)
            }
        }
    };
    let w: Vec<f64> = dists.iter().map(|d| (-(d * d) / (kernel_width * kernel_width)).exp()).collect();

    let per_axis = (0..dim)
        .map(|c| {
            let target: Vec<f64> = (0..m).map(|i| y[i * dim + c]).collect();
            let fit = weighted_ridge(&x, m, p, &target, &w, opts.ridge_lambda)?;
            Ok(AxisFit {
                top_features: top_by_magnitude(&fit.coef, matrix.feature_names(), opts.top_m.min(p)),
                weights: fit.coef,
                intercept: fit.intercept,
                r2: fit.r2,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(LocalExplanation {
        instance_id: instance_id.to_string(),
        neighborhood_ids,
        kernel_width,
        feature_names: matrix.feature_names().to_vec(),
        per_axis,
    })
}

/// Explains several instances in parallel; output order follows `ids`.
pub fn explain_many(
    matrix: &FeatureMatrix,
    embedding: &Embedding,
    ids: &[String],
    opts: &ExplainOptions,
) -> Result<Vec<LocalExplanation>> {
    ids.par_iter().map(|id| explain_local(matrix, embedding, id, opts)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryFrequencyVector {
    pub instance_id: String,
    /// Indexed by [`Category::index`].
    pub counts: [usize; Category::COUNT],
}

impl CategoryFrequencyVector {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Counts top features per category across all axes, with multiplicity.
pub fn category_frequency_vector(
    explanation: &LocalExplanation,
    taxonomy: &CategoryTaxonomy,
) -> Result<CategoryFrequencyVector> {
    let mut counts = [0usize; Category::COUNT];
    for f in explanation.top_features() {
        let c = taxonomy
            .get(f)
            .ok_or_else(|| validation!("uncategorized feature: {f}"))?;
        counts[c.index()] += 1;
    }
    Ok(CategoryFrequencyVector {
        instance_id: explanation.instance_id.clone(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimred::Method;

    fn assignment(labels: Vec<usize>) -> ClusterAssignment {
        let k = labels.iter().max().unwrap() + 1;
        ClusterAssignment {
            labels,
            centroids: DMatrix::zeros(k, 2),
            inertia: 0.0,
            k,
            seed: 0,
            inertia_trace: vec![],
        }
    }

    fn cohort_fixture(hc_in_cluster0: usize) -> (ClusterAssignment, Vec<String>, Vec<Diagnosis>) {
        let n = hc_in_cluster0 + 10;
        let ids = (0..n).map(|i| format!("s{i:02}")).collect();
        let mut labels = vec![Diagnosis::HC; hc_in_cluster0];
        labels.extend(vec![Diagnosis::AD; 10]);
        (assignment(vec![0; n]), ids, labels)
    }

    #[test]
    fn cohort_sampling_contract() {
        let (a, ids, labels) = cohort_fixture(25);
        let req = [CohortRequest::new(Diagnosis::HC, 0)];
        let c = select_explanation_cohort(&a, &ids, &labels, &req, 3).unwrap();
        let g = &c.groups["HC@0"];
        assert_eq!(g.len(), 10);
        let mut uniq: Vec<_> = g.iter().map(|m| &m.sample_id).collect();
        uniq.dedup();
        assert_eq!(uniq.len(), 10);
        assert!(c.warnings.is_empty());
        assert_eq!(c, select_explanation_cohort(&a, &ids, &labels, &req, 3).unwrap());
    }

    #[test]
    fn cohort_short_groups() {
        let (a, ids, labels) = cohort_fixture(7);
        let req = [CohortRequest::new(Diagnosis::HC, 0)];
        let c = select_explanation_cohort(&a, &ids, &labels, &req, 3).unwrap();
        assert_eq!(c.groups["HC@0"].len(), 7);
        assert_eq!(c.warnings.len(), 1);

        let (a, ids, labels) = cohort_fixture(4);
        let e = select_explanation_cohort(&a, &ids, &labels, &req, 3).unwrap_err();
        assert!(e.to_string().contains("at least 5"));
    }

    fn linear_fixture(n: usize) -> (FeatureMatrix, Embedding) {
        let mut g = rng(9);
        let p = 6;
        let values = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut g));
        let matrix = FeatureMatrix::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..n).map(|i| format!("p{i}")).collect(),
            vec!["d".into(); n],
            vec![Diagnosis::HC; n],
            (0..p).map(|j| format!("f{j}")).collect(),
            values.clone(),
        )
        .unwrap();
        let coords = DMatrix::from_fn(n, 2, |i, c| if c == 0 { 2.0 * values[(i, 1)] } else { -3.0 * values[(i, 4)] });
        let emb = Embedding::from_coords(matrix.sample_ids().to_vec(), coords, Method::Tsne).unwrap();
        (matrix, emb)
    }

    #[test]
    fn recovers_linear_map() {
        let (m, e) = linear_fixture(120);
        let ex = explain_local(&m, &e, "s5", &ExplainOptions::default()).unwrap();
        assert_eq!(ex.per_axis.len(), 2);
        assert_eq!(ex.per_axis[0].top_features[0], "f1");
        assert_eq!(ex.per_axis[1].top_features[0], "f4");
        assert!(ex.per_axis.iter().all(|a| a.r2 >= 0.99 && a.top_features.len() == 5));
        assert_eq!(ex.neighborhood_ids[0], "s5");
    }

    #[test]
    fn perturbation_strategy_runs() {
        let (m, e) = linear_fixture(120);
        let opts = ExplainOptions {
            strategy: NeighborhoodStrategy::Perturb {
                samples: 200,
                scale: 0.5,
                k: 5,
            },
            ..Default::default()
        };
        let ex = explain_local(&m, &e, "s5", &opts).unwrap();
        assert!(ex.neighborhood_ids.is_empty());
        assert!(ex.per_axis.iter().all(|a| (0.0..=1.0).contains(&a.r2)));
    }

    #[test]
    fn constant_embedding_gives_zero_fit() {
        let (m, _) = linear_fixture(60);
        let e = Embedding::from_coords(m.sample_ids().to_vec(), DMatrix::from_element(60, 2, 1.5), Method::Tsne).unwrap();
        let ex = explain_local(&m, &e, "s0", &ExplainOptions::default()).unwrap();
        for a in &ex.per_axis {
            assert!(a.weights.iter().all(|&w| w == 0.0));
            assert_eq!(a.r2, 0.0);
        }
    }

    #[test]
    fn explain_preconditions() {
        let (m, e) = linear_fixture(60);
        let small = ExplainOptions {
            neighborhood_size: 9,
            ..Default::default()
        };
        assert!(explain_local(&m, &e, "s0", &small).is_err());
        assert!(explain_local(&m, &e, "nope", &ExplainOptions::default()).is_err());
    }

    fn explanation(tops: Vec<Vec<&str>>) -> LocalExplanation {
        LocalExplanation {
            instance_id: "x".into(),
            neighborhood_ids: vec![],
            kernel_width: 1.0,
            feature_names: vec![],
            per_axis: tops
                .into_iter()
                .map(|t| AxisFit {
                    weights: vec![],
                    intercept: 0.0,
                    r2: 0.0,
                    top_features: t.into_iter().map(String::from).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn frequency_counting() {
        let tax = CategoryTaxonomy::new(
            [
                ("mfcc_0_mean".to_string(), Category::Acoustic),
                ("f0_std".to_string(), Category::Acoustic),
                ("brunet".to_string(), Category::LexicalComplexityRichness),
            ]
            .into_iter()
            .collect(),
        );
        let v = category_frequency_vector(&explanation(vec![vec!["mfcc_0_mean", "f0_std"], vec!["brunet"]]), &tax).unwrap();
        assert_eq!(v.counts[Category::Acoustic.index()], 2);
        assert_eq!(v.counts[Category::LexicalComplexityRichness.index()], 1);
        assert_eq!(v.total(), 3);
        let empty = category_frequency_vector(&explanation(vec![vec![], vec![]]), &tax).unwrap();
        assert_eq!(empty.counts, [0; 9]);
        let e = category_frequency_vector(&explanation(vec![vec!["zcr"]]), &tax).unwrap_err();
        assert!(e.to_string().contains("uncategorized feature: zcr"));
    }
}
