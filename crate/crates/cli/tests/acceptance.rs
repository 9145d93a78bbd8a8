//! Acceptance suite: one PASS/FAIL line per criterion, each checked against an
//! oracle written here rather than against the library's own helpers.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use symptomap::classify::{grouped_kfold_split, run_classification_study, subject_majority, FeatureSetName, StudyOptions};
use symptomap::cluster::silhouette_score;
use symptomap::corpus::{preprocess, Category, Diagnosis, FeatureMatrix};
use symptomap::dimred::{
    conditional_affinities, exact_knn, fit_pca, fit_tsne, parallel_analysis, smooth_knn, Diagnostics, Embedding, Method,
    TsneParams,
};
use symptomap::explain::{explain_local, ExplainOptions};
use symptomap::pipeline::{run_stages, PipelineConfig, Stage};
use symptomap::stats::{kruskal_wallis, mann_whitney, paired_t_test};
use symptomap::synth::{generate_cohort, Nonlinearity, SyntheticSpec};
use symptomap::util::rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn matrix_from(values: DMatrix<f64>, labels: Vec<Diagnosis>) -> FeatureMatrix {
    let (n, p) = values.shape();
    FeatureMatrix::new(
        (0..n).map(|i| format!("s{i:04}")).collect(),
        (0..n).map(|i| format!("p{i:04}")).collect(),
        vec!["test".into(); n],
        labels,
        (0..p).map(|j| format!("f{j}")).collect(),
        values,
    )
    .unwrap()
}

fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut g))
}

/// Every size-k subset of 0..n as a bitmask.
fn subsets(n: usize, k: usize) -> Vec<u32> {
    (0u32..1 << n).filter(|m| m.count_ones() as usize == k).collect()
}

fn criterion_1() -> Outcome {
    // exact Mann-Whitney p over every untied arrangement with N <= 10
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for total in 2..=10usize {
        for nx in 1..total {
            let ny = total - nx;
            let arrangements = subsets(total, nx);
            // U_x for a mask: pairs (x, y) with x ranked above y
            let u_of = |mask: u32| -> usize {
                let mut u = 0;
                for i in 0..total {
                    if mask >> i & 1 == 1 {
                        u += (0..i).filter(|&j| mask >> j & 1 == 0).count();
                    }
                }
                u
            };
            let null: Vec<usize> = arrangements.iter().map(|&m| u_of(m)).collect();
            for &mask in &arrangements {
                let x: Vec<f64> = (0..total).filter(|i| mask >> i & 1 == 1).map(|i| i as f64).collect();
                let y: Vec<f64> = (0..total).filter(|i| mask >> i & 1 == 0).map(|i| i as f64).collect();
                let ux = u_of(mask);
                let u = ux.min(nx * ny - ux);
                let tail = null.iter().filter(|&&v| v <= u).count() as f64;
                let expected = (2.0 * tail / null.len() as f64).min(1.0);
                let r = mann_whitney(&x, &y).map_err(|e| e.to_string())?;
                if !r.exact || r.statistic != u as f64 {
                    return Err(format!("nx={nx} ny={ny} mask={mask:b}: statistic {} exact {}", r.statistic, r.exact));
                }
                worst = worst.max((r.p_value - expected).abs());
                checked += 1;
            }
        }
    }
    let kw = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]).map_err(|e| e.to_string())?;
    let t = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    check(
        worst < 1e-12 && (kw.statistic - 7.2).abs() < 1e-9 && (kw.p_value - 0.0273).abs() < 1e-4 && (t.statistic - 3.4641).abs() < 1e-4,
        format!(
            "{checked} MW arrangements, max |dp| = {worst:.1e}; KW H = {:.9}, p = {:.5}; paired t = {:.5}",
            kw.statistic, kw.p_value, t.statistic
        ),
    )
}

fn brute_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let dist = |i: usize, j: usize| -> f64 {
        points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

fn embedding_of(points: &[Vec<f64>]) -> Embedding {
    let d = points[0].len();
    let coords = DMatrix::from_fn(points.len(), d, |i, c| points[i][c]);
    Embedding::from_coords((0..points.len()).map(|i| format!("s{i}")).collect(), coords, Method::Pca).unwrap()
}

fn criterion_2() -> Outcome {
    let mut g = rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = g.random_range(10..=500);
        let d = g.random_range(1..=4);
        let k = g.random_range(2..=6);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut g)).collect())
            .collect();
        let mut labels: Vec<usize> = (0..n).map(|_| g.random_range(0..k)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let ours = silhouette_score(&embedding_of(&points), &labels).map_err(|e| e.to_string())?;
        worst = worst.max((ours - brute_silhouette(&points, &labels)).abs());
    }
    let four = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
    let s = silhouette_score(&embedding_of(&four), &[0, 0, 1, 1]).map_err(|e| e.to_string())?;
    check(
        worst < 1e-12 && (s - 0.9003).abs() < 1e-4,
        format!("100 labelings, max |diff| vs brute force = {worst:.1e}; four-point case = {s:.6}"),
    )
}

fn criterion_3() -> Outcome {
    let x = gaussian(60, 8, 31);
    let m = matrix_from(x.clone(), vec![Diagnosis::HC; 60]);
    let (model, emb) = fit_pca(&m, 8).map_err(|e| e.to_string())?;
    let mut recon = &emb.coords * &model.components;
    for (j, mut col) in recon.column_iter_mut().enumerate() {
        col.add_scalar_mut(model.mean[j]);
    }
    let err = (recon - &x).abs().max();

    let mut big = gaussian(10_000, 2, 32);
    big.column_mut(0).scale_mut(2.0);
    let (model, _) = fit_pca(&matrix_from(big, vec![Diagnosis::HC; 10_000]), 2).map_err(|e| e.to_string())?;
    let evr = model.explained_variance_ratio.clone();

    let noise = matrix_from(gaussian(200, 50, 33), vec![Diagnosis::HC; 200]);
    let pa = parallel_analysis(&noise, 100, 95.0, 34).map_err(|e| e.to_string())?;
    check(
        err < 1e-8 && (evr[0] - 0.8).abs() <= 0.02 && (evr[1] - 0.2).abs() <= 0.02 && pa.retained_count <= 2,
        format!(
            "reconstruction error {err:.1e}; EVR [{:.4}, {:.4}]; noise retains {}",
            evr[0], evr[1], pa.retained_count
        ),
    )
}

fn criterion_4() -> Outcome {
    let spec = SyntheticSpec {
        n_per_label: [76, 76, 74, 74],
        seed: 4,
        ..SyntheticSpec::default()
    };
    let cohort = generate_cohort(&spec).map_err(|e| e.to_string())?;
    let (m, _) = preprocess(&cohort.matrix, 0.9).map_err(|e| e.to_string())?;
    let (n, d) = (m.n_samples(), m.n_features());
    let data: Vec<f64> = (0..n).flat_map(|i| m.row(i)).collect();

    let cond = conditional_affinities(&data, n, d, 30.0);
    let perp_err = (0..n)
        .map(|i| {
            let h: f64 = cond[i * n..(i + 1) * n].iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
            (h.exp() - 30.0).abs()
        })
        .fold(0.0, f64::max);

    let k = 50;
    let (_, dist) = exact_knn(&data, n, d, k - 1);
    let (sigmas, rhos) = smooth_knn(&dist, n, k - 1, k);
    let sum_err = (0..n)
        .map(|i| {
            let s: f64 = dist[i * (k - 1)..(i + 1) * (k - 1)]
                .iter()
                .map(|&dd| (-(dd - rhos[i]).max(0.0) / sigmas[i]).exp())
                .sum();
            (s - (k as f64).log2()).abs()
        })
        .fold(0.0, f64::max);

    let emb = fit_tsne(&m, &TsneParams { seed: 4, ..TsneParams::default() }).map_err(|e| e.to_string())?;
    let Diagnostics::Tsne { kl_trace, .. } = &emb.diagnostics else {
        return Err("t-SNE diagnostics missing".into());
    };
    let at = |it: usize| kl_trace.iter().find(|t| t.0 == it).map(|t| t.1);
    let (kl250, kl1000) = (at(250).ok_or("no KL at 250")?, at(1000).ok_or("no KL at 1000")?);
    check(
        n == 300 && perp_err < 1e-3 && sum_err < 1e-3 && kl1000 < kl250,
        format!("{n} points; max perplexity error {perp_err:.1e}; max UMAP sum error {sum_err:.1e}; KL 250 = {kl250:.4}, 1000 = {kl1000:.4}"),
    )
}

fn pipeline_config(dir: &Path, seed: u64, extra: &str) -> PipelineConfig {
    let text = format!(
        "matrix = \"{}\"\ncategories = \"{}\"\nseed = {seed}\nout_dir = \"{}\"\n{extra}",
        dir.join("matrix.csv").display(),
        dir.join("categories.json").display(),
        dir.join("results").display()
    );
    PipelineConfig::from_toml(&text, &[]).unwrap()
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticSpec {
        n_per_label: [150; 4],
        nonlinearity: Nonlinearity::SwissRollLift,
        separation: 10.0,
        seed: 1,
        ..SyntheticSpec::default()
    };
    generate_cohort(&spec).and_then(|c| c.write(dir.path())).map_err(|e| e.to_string())?;
    let cfg = pipeline_config(dir.path(), 1, "methods = [\"PCA\", \"TSNE\", \"UMAP\"]\n");
    let report = run_stages(&cfg, &Stage::Cluster.through()).map_err(|e| e.to_string())?;
    let row = |m: Method| report.table2.iter().find(|r| r.method == m).unwrap();
    let (pca, tsne, umap) = (row(Method::Pca), row(Method::Tsne), row(Method::Umap));
    check(
        tsne.silhouette >= pca.silhouette + 0.05
            && umap.silhouette >= pca.silhouette + 0.05
            && tsne.optimal_k == 4
            && umap.optimal_k == 4,
        format!(
            "silhouette(K=4) PCA {:.4}, t-SNE {:.4}, UMAP {:.4}; elbow K PCA {}, t-SNE {}, UMAP {}",
            pca.silhouette, tsne.silhouette, umap.silhouette, pca.optimal_k, tsne.optimal_k, umap.optimal_k
        ),
    )
}

fn criterion_6() -> Outcome {
    let n = 200;
    let values = gaussian(n, 8, 61);
    let m = matrix_from(values.clone(), vec![Diagnosis::HC; n]);
    let coords = DMatrix::from_fn(n, 2, |i, c| if c == 0 { 1.5 * values[(i, 2)] } else { -0.7 * values[(i, 6)] });
    let emb = Embedding::from_coords(m.sample_ids().to_vec(), coords, Method::Tsne).map_err(|e| e.to_string())?;
    let mut g = rng(62);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut g);
    let mut min_r2 = f64::INFINITY;
    for &i in &ids[..20] {
        let ex = explain_local(&m, &emb, &format!("s{i:04}"), &ExplainOptions::default()).map_err(|e| e.to_string())?;
        if ex.per_axis[0].top_features[0] != "f2" || ex.per_axis[1].top_features[0] != "f6" {
            return Err(format!("instance s{i:04}: top features {:?}", ex.top_features().collect::<Vec<_>>()));
        }
        min_r2 = min_r2.min(ex.per_axis.iter().map(|a| a.r2).fold(f64::INFINITY, f64::min));
    }
    check(min_r2 >= 0.99, format!("20 instances rank f2/f6 first on axes 1/2; min r2 = {min_r2:.6}"))
}

fn criterion_7() -> Outcome {
    let informative = vec![
        Category::Acoustic,
        Category::DiscourseMapping,
        Category::LexicalComplexityRichness,
        Category::WordFindingDifficulty,
        Category::Coherence,
    ];
    let spec = SyntheticSpec {
        n_per_label: [60, 100, 100, 100],
        informative_categories: informative.clone(),
        separation: 6.0,
        seed: 5,
        ..SyntheticSpec::default()
    };
    let cohort = generate_cohort(&spec).map_err(|e| e.to_string())?;
    let opts = StudyOptions { seed: 7, ..StudyOptions::default() };
    let report = run_classification_study(&cohort.matrix, &cohort.taxonomy, &informative, &opts).map_err(|e| e.to_string())?;

    // leakage: every fold of every set, plus the splitter on its own
    let mut pairs = 0;
    for set in &report.sets {
        for f in &set.folds {
            if let Some(s) = f.test_subject_ids.iter().find(|s| f.train_subject_ids.contains(s)) {
                return Err(format!("subject {s} in train and test of fold {}", f.fold_index));
            }
            pairs += f.test_subject_ids.len();
        }
    }
    let folds = grouped_kfold_split(cohort.matrix.subject_ids(), cohort.matrix.labels(), 10, 7).map_err(|e| e.to_string())?;
    let mut fold_of = std::collections::HashMap::new();
    for (s, f) in cohort.matrix.subject_ids().iter().zip(&folds) {
        if *fold_of.entry(s.clone()).or_insert(*f) != *f {
            return Err(format!("subject {s} split across folds"));
        }
    }

    let acc = |name| report.set(name).unwrap().mean.accuracy;
    let (fd, rest) = (acc(FeatureSetName::Fd), acc(FeatureSetName::FMinusFd));

    // label-shuffled control: permute labels across subjects, keep each subject's samples together
    let study = cohort.matrix.select_rows(
        &(0..cohort.matrix.n_samples()).filter(|&i| cohort.matrix.labels()[i] != Diagnosis::HC).collect::<Vec<_>>(),
    );
    let majority = subject_majority(study.subject_ids(), study.labels());
    let mut shuffled: Vec<Diagnosis> = majority.iter().map(|s| s.1).collect();
    shuffled.shuffle(&mut rng(71));
    let relabel: std::collections::HashMap<&str, Diagnosis> =
        majority.iter().zip(&shuffled).map(|(s, &l)| (s.0.as_str(), l)).collect();
    let labels: Vec<Diagnosis> = study.subject_ids().iter().map(|s| relabel[s.as_str()]).collect();
    let control = FeatureMatrix::new(
        study.sample_ids().to_vec(),
        study.subject_ids().to_vec(),
        study.dataset_tags().to_vec(),
        labels.clone(),
        study.feature_names().to_vec(),
        study.values().clone(),
    )
    .map_err(|e| e.to_string())?;
    let shuffled_report = run_classification_study(&control, &cohort.taxonomy, &informative, &opts).map_err(|e| e.to_string())?;
    let f = shuffled_report.set(FeatureSetName::F).unwrap();
    let accs: Vec<f64> = f.folds.iter().map(|x| x.accuracy).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt();
    let se = sd / (accs.len() as f64).sqrt();
    let chance = {
        let mut counts = [0usize; 4];
        labels.iter().for_each(|l| counts[l.index()] += 1);
        *counts.iter().max().unwrap() as f64 / labels.len() as f64
    };
    check(
        fd >= 0.95 && rest <= 0.60 && (mean - chance).abs() <= 3.0 * se,
        format!(
            "no leakage over {pairs} test-subject slots; accuracy F {:.3}, F_d {fd:.3}, F-F_d {rest:.3}; shuffled F {mean:.3} (chance {chance:.3}, SE {se:.3})",
            acc(FeatureSetName::F)
        ),
    )
}

fn criterion_8() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_symptomap");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
        }
    };
    run(&["synth", "-q", "--seed", "8", "--out-dir", data.to_str().unwrap(), "--separation", "8"])?;
    let config = data.join("config.toml");
    std::fs::write(
        &config,
        "matrix = \"matrix.csv\"\ncategories = \"categories.json\"\nseed = 8\n\
         classify_differentiators = [\"acoustic\", \"coherence\"]\n",
    )
    .map_err(|e| e.to_string())?;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        run(&["run-all", "-q", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()])?;
    }
    let mut files = vec!["report.json".to_string()];
    files.extend(Method::ALL.iter().map(|m| format!("embeddings/{}.csv", m.slug())));
    for f in &files {
        let (x, y) = (std::fs::read(a.join(f)), std::fs::read(b.join(f)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            (Ok(_), Ok(_)) => return Err(format!("{f} differs between runs")),
            _ => return Err(format!("{f} missing")),
        }
    }
    check(true, format!("{} files byte-identical across two run-all invocations", files.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("statistical-test oracles", criterion_1),
        ("silhouette oracle", criterion_2),
        ("PCA", criterion_3),
        ("t-SNE/UMAP calibration", criterion_4),
        ("non-linear beats linear", criterion_5),
        ("LIME recovery", criterion_6),
        ("classification study", criterion_7),
        ("end-to-end determinism", criterion_8),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {} PASS ({name}, {secs:.1}s): {d}", k + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} FAIL ({name}, {secs:.1}s): {d}", k + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
