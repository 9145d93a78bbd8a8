mod common;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use proptest::prelude::*;
use symptomap::classify::{grouped_kfold_split, macro_scores};
use symptomap::cluster::{elbow_from_curve, inertia_of, kmeans, silhouette, Points};
use symptomap::corpus::{pearson, preprocess, Category, CategoryTaxonomy, Diagnosis};
use symptomap::dimred::{conditional_affinities, exact_knn, fit_pca, smooth_knn, Embedding, Method};
use symptomap::explain::{category_frequency_vector, explain_local, weighted_ridge, ExplainOptions};
use symptomap::stats::{kruskal_wallis, mann_whitney};
use symptomap::synth::{generate_cohort, SyntheticSpec};

use common::{brute_silhouette, gaussian, matrix, row_major};

fn small_sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-8i32..8).prop_map(f64::from), 1..14)
}

/// Pairs with x above y, counting ties as one half.
fn u_by_pairs(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .flat_map(|a| y.iter().map(move |b| if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 }))
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mann_whitney_u_matches_pair_count(x in small_sample(), y in small_sample()) {
        let r = mann_whitney(&x, &y).unwrap();
        let ux = u_by_pairs(&x, &y);
        let uy = u_by_pairs(&y, &x);
        prop_assert!((ux + uy - (x.len() * y.len()) as f64).abs() < 1e-9);
        prop_assert!((r.statistic - ux.min(uy)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn mann_whitney_is_symmetric_and_rank_invariant(x in small_sample(), y in small_sample()) {
        let a = mann_whitney(&x, &y).unwrap();
        let b = mann_whitney(&y, &x).unwrap();
        prop_assert_eq!(a.statistic, b.statistic);
        prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        let f = |v: &Vec<f64>| v.iter().map(|t| (t / 3.0).exp() + 7.0).collect::<Vec<_>>();
        let c = mann_whitney(&f(&x), &f(&y)).unwrap();
        prop_assert_eq!(a.statistic, c.statistic);
        prop_assert!((a.p_value - c.p_value).abs() < 1e-12);
    }

    #[test]
    fn kruskal_wallis_is_bounded_and_order_free(groups in prop::collection::vec(small_sample(), 2..5)) {
        let r = kruskal_wallis(&groups).unwrap();
        prop_assert!(r.statistic >= -1e-12);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        let mut rev = groups.clone();
        rev.reverse();
        let s = kruskal_wallis(&rev).unwrap();
        prop_assert!((r.statistic - s.statistic).abs() < 1e-9);
    }

    #[test]
    fn silhouette_matches_definition(n in 6usize..60, d in 1usize..4, k in 2usize..5, seed in any::<u64>()) {
        let data = row_major(&gaussian(n, d, seed));
        let mut labels: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize) % k).collect();
        labels[0] = 0;
        labels[1] = 1;
        let s = silhouette(Points::new(&data, n, d), &labels).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - brute_silhouette(&data, d, &labels)).abs() < 1e-12);
    }

    #[test]
    fn kmeans_labels_and_inertia_agree(n in 8usize..80, k in 1usize..6, seed in any::<u64>()) {
        let data = row_major(&gaussian(n, 2, seed));
        let a = kmeans(Points::new(&data, n, 2), k, seed, 3).unwrap();
        prop_assert!(a.labels.iter().all(|&l| l < k));
        prop_assert_eq!(a.labels.iter().collect::<BTreeSet<_>>().len(), k);
        let centers: Vec<Vec<f64>> = (0..k).map(|c| a.centroids.row(c).iter().copied().collect()).collect();
        let again = inertia_of(Points::new(&data, n, 2), &a.labels, &centers);
        prop_assert!((a.inertia - again).abs() <= 1e-9 * (1.0 + again));
    }

    #[test]
    fn elbow_picks_a_listed_k(inertias in prop::collection::vec(0.0f64..1e3, 3..10)) {
        let mut sorted = inertias.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let ks: Vec<usize> = (2..2 + sorted.len()).collect();
        let curve = elbow_from_curve(&ks, &sorted).unwrap();
        prop_assert!(ks.contains(&curve.chosen_k));
        prop_assert_eq!(curve.chord_distances.len(), ks.len());
    }

    #[test]
    fn pca_is_orthonormal_and_reconstructs(n in 6usize..40, p in 2usize..7, seed in any::<u64>()) {
        let x = gaussian(n, p, seed);
        let full = p.min(n - 1);
        let (model, emb) = fit_pca(&matrix(x.clone(), vec![Diagnosis::HC; n]), full).unwrap();
        let gram = &model.components * model.components.transpose();
        prop_assert!((gram - DMatrix::identity(full, full)).abs().max() < 1e-9);
        if full == p {
            let mut back = &emb.coords * &model.components;
            for (j, mut col) in back.column_iter_mut().enumerate() {
                col.add_scalar_mut(model.mean[j]);
            }
            prop_assert!((back - x).abs().max() < 1e-8);
        }
        let evr: f64 = model.explained_variance_ratio.iter().sum();
        prop_assert!(evr <= 1.0 + 1e-9);
        prop_assert!(model.explained_variance_ratio.windows(2).all(|w| w[0] + 1e-12 >= w[1]));
    }

    #[test]
    fn preprocess_standardizes_and_prunes(n in 10usize..50, p in 2usize..8, thr in 0.5f64..1.0, seed in any::<u64>()) {
        let mut x = gaussian(n, p, seed);
        // a near-duplicate column and a constant one
        let dup = x.column(0) * 2.0 + gaussian(n, 1, seed ^ 1).column(0) * 0.01;
        x = x.insert_column(p, 0.0);
        x.set_column(p, &dup);
        x = x.insert_column(0, 3.0);
        let (m, report) = preprocess(&matrix(x, vec![Diagnosis::AD; n]), thr).unwrap();
        prop_assert_eq!(report.dropped_constant.len(), 1);
        for j in 0..m.n_features() {
            let col: Vec<f64> = m.values().column(j).iter().copied().collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
            for k in j + 1..m.n_features() {
                let other: Vec<f64> = m.values().column(k).iter().copied().collect();
                prop_assert!(pearson(&col, &other).abs() <= thr);
            }
        }
    }

    #[test]
    fn tsne_rows_are_calibrated(n in 20usize..60, perp in 2.0f64..6.0, seed in any::<u64>()) {
        let data = row_major(&gaussian(n, 3, seed));
        let cond = conditional_affinities(&data, n, 3, perp);
        for i in 0..n {
            let row = &cond[i * n..(i + 1) * n];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(row[i], 0.0);
            let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
            prop_assert!((h.exp() - perp).abs() < 1e-3);
        }
    }

    #[test]
    fn umap_memberships_sum_to_log2_k(n in 20usize..60, k in 4usize..15, seed in any::<u64>()) {
        let data = row_major(&gaussian(n, 3, seed));
        let (_, dist) = exact_knn(&data, n, 3, k - 1);
        let (sigmas, rhos) = smooth_knn(&dist, n, k - 1, k);
        for i in 0..n {
            let s: f64 = dist[i * (k - 1)..(i + 1) * (k - 1)]
                .iter()
                .map(|&dd| (-(dd - rhos[i]).max(0.0) / sigmas[i]).exp())
                .sum();
            prop_assert!((s - (k as f64).log2()).abs() < 1e-3);
        }
    }

    #[test]
    fn grouped_folds_never_split_a_subject(
        subjects in prop::collection::vec((0usize..30, 0usize..3), 20..120),
        folds in 2usize..8,
        seed in any::<u64>(),
    ) {
        let ids: Vec<String> = subjects.iter().map(|s| format!("p{}", s.0)).collect();
        // a subject keeps one label
        let labels: Vec<Diagnosis> = subjects.iter().map(|s| Diagnosis::ALL[1 + s.0 % 3]).collect();
        let distinct = ids.iter().collect::<BTreeSet<_>>().len();
        prop_assume!(distinct >= folds);
        let split = grouped_kfold_split(&ids, &labels, folds, seed).unwrap();
        let mut fold_of = BTreeMap::new();
        for (s, &f) in ids.iter().zip(&split) {
            prop_assert!(f < folds);
            prop_assert_eq!(*fold_of.entry(s).or_insert(f), f);
        }
        let mut per_fold = vec![0usize; folds];
        fold_of.values().for_each(|&f| per_fold[f] += 1);
        prop_assert!(per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() <= 1);
    }

    #[test]
    fn macro_scores_are_bounded(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60)) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let s = macro_scores(&t, &p, 3);
        for v in s.as_array() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let hits = t.iter().zip(&p).filter(|(a, b)| a == b).count();
        prop_assert!((s.accuracy - hits as f64 / t.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn ridge_recovers_exact_linear_targets(n in 12usize..40, seed in any::<u64>()) {
        let x = gaussian(n, 3, seed);
        let coef = [1.5, -2.0, 0.25];
        let y: Vec<f64> = (0..n).map(|i| 4.0 + (0..3).map(|j| coef[j] * x[(i, j)]).sum::<f64>()).collect();
        let w = vec![1.0; n];
        let fit = weighted_ridge(&row_major(&x), n, 3, &y, &w, 0.0).unwrap();
        for j in 0..3 {
            prop_assert!((fit.coef[j] - coef[j]).abs() < 1e-8);
        }
        prop_assert!((fit.intercept - 4.0).abs() < 1e-8);
        prop_assert!(fit.r2 > 1.0 - 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn frequency_vectors_count_every_top_feature(seed in any::<u64>(), top_m in 1usize..6) {
        let n = 60;
        let x = gaussian(n, 9, seed);
        let m = matrix(x.clone(), vec![Diagnosis::HC; n]);
        let coords = DMatrix::from_fn(n, 2, |i, c| x[(i, c)] + 0.5 * x[(i, 8)]);
        let emb = Embedding::from_coords(m.sample_ids().to_vec(), coords, Method::Tsne).unwrap();
        let opts = ExplainOptions { top_m, seed, ..ExplainOptions::default() };
        let ex = explain_local(&m, &emb, "s3", &opts).unwrap();
        let tax = CategoryTaxonomy::new(
            (0..9).map(|j| (format!("f{j}"), Category::ALL[j])).collect(),
        );
        let v = category_frequency_vector(&ex, &tax).unwrap();
        prop_assert_eq!(v.counts.len(), Category::COUNT);
        prop_assert_eq!(v.total(), 2 * top_m);
    }

    #[test]
    fn synthetic_cohorts_honor_their_spec(
        counts in prop::array::uniform4(1usize..8),
        group in 1usize..4,
        separation in 0.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let spec = SyntheticSpec {
            n_per_label: counts.map(|c| c * group),
            subjects_per_sample_group: group,
            separation,
            seed,
            ..SyntheticSpec::default()
        };
        let c = generate_cohort(&spec).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                let (a, b) = (c.centers[i], c.centers[j]);
                prop_assert!(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() >= separation - 1e-9);
            }
        }
        let mut owned: BTreeMap<&str, (usize, Diagnosis)> = BTreeMap::new();
        for (s, l) in c.matrix.subject_ids().iter().zip(c.matrix.labels()) {
            let e = owned.entry(s).or_insert((0, *l));
            e.0 += 1;
            prop_assert_eq!(e.1, *l);
        }
        prop_assert!(owned.values().all(|e| e.0 == group));
        prop_assert_eq!(c.matrix.n_samples(), spec.n_per_label.iter().sum::<usize>());
    }
}
