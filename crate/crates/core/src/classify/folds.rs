use std::collections::HashMap;

use rand::seq::SliceRandom;

use crate::corpus::Diagnosis;
use crate::error::{invalid, Result};
use crate::util::rng;

/// Most frequent label of each subject; ties go to the earlier label in
/// [`Diagnosis::ALL`]. Subjects are listed in order of first appearance.
pub fn subject_majority(subject_ids: &[String], labels: &[Diagnosis]) -> Vec<(String, Diagnosis)> {
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, [usize; 4]> = HashMap::new();
    for (s, l) in subject_ids.iter().zip(labels) {
        let entry = counts.entry(s.as_str()).or_insert_with(|| {
            order.push(s.as_str());
            [0; 4]
        });
        entry[l.index()] += 1;
    }
    order
        .into_iter()
        .map(|s| {
            let c = counts[s];
            let mut best = 0;
            for k in 1..4 {
                if c[k] > c[best] {
                    best = k;
                }
            }
            (s.to_string(), Diagnosis::ALL[best])
        })
        .collect()
}

/// Fold index per sample. Subjects are grouped by majority label, shuffled
/// within each label and dealt round-robin, so every subject sits in exactly
/// one fold and fold subject counts differ by at most one.
pub fn grouped_kfold_split(subject_ids: &[String], labels: &[Diagnosis], n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if subject_ids.len() != labels.len() {
        return Err(invalid!("{} subject ids for {} labels", subject_ids.len(), labels.len()));
    }
    if n_folds < 2 {
        return Err(invalid!("need at least 2 folds, got {n_folds}"));
    }
    let subjects = subject_majority(subject_ids, labels);
    if subjects.len() < n_folds {
        return Err(invalid!("{} distinct subjects cannot fill {n_folds} folds", subjects.len()));
    }
    let mut g = rng(seed);
    let mut dealt: Vec<&str> = Vec::with_capacity(subjects.len());
    for label in Diagnosis::ALL {
        let mut group: Vec<&str> = subjects.iter().filter(|s| s.1 == label).map(|s| s.0.as_str()).collect();
        group.shuffle(&mut g);
        dealt.extend(group);
    }
    let fold_of: HashMap<&str, usize> = dealt.iter().enumerate().map(|(t, &s)| (s, t % n_folds)).collect();
    Ok(subject_ids.iter().map(|s| fold_of[s.as_str()]).collect())
}
