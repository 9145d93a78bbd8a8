#![allow(dead_code)]

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use symptomap::corpus::{Diagnosis, FeatureMatrix};
use symptomap::util::rng;

pub fn matrix(values: DMatrix<f64>, labels: Vec<Diagnosis>) -> FeatureMatrix {
    let (n, p) = values.shape();
    FeatureMatrix::new(
        (0..n).map(|i| format!("s{i}")).collect(),
        (0..n).map(|i| format!("p{i}")).collect(),
        vec!["t".into(); n],
        labels,
        (0..p).map(|j| format!("f{j}")).collect(),
        values,
    )
    .unwrap()
}

pub fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut g))
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect()
}

/// O(n^2) silhouette straight from the definition; singletons score 0.
pub fn brute_silhouette(data: &[f64], d: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    let dist = |i: usize, j: usize| -> f64 {
        (0..d).map(|c| (data[i * d + c] - data[j * d + c]).powi(2)).sum::<f64>().sqrt()
    };
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in (0..n).filter(|&j| j != i) {
            sums[labels[j]] += dist(i, j);
            counts[labels[j]] += 1;
        }
        if counts[labels[i]] == 0 {
            continue;
        }
        let a = sums[labels[i]] / counts[labels[i]] as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}
