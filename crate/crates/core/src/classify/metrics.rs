use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl Scores {
    pub const NAMES: [&'static str; 4] = ["precision", "recall", "f1", "accuracy"];

    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "precision" => Some(self.precision),
            "recall" => Some(self.recall),
            "f1" => Some(self.f1),
            "accuracy" => Some(self.accuracy),
            _ => None,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.precision, self.recall, self.f1, self.accuracy]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Scores {
            precision: a[0],
            recall: a[1],
            f1: a[2],
            accuracy: a[3],
        }
    }
}

/// `m[true][pred]` counts.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[t][p] += 1;
    }
    m
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro precision, recall and F1 over the classes that occur in either
/// `y_true` or `y_pred`; a zero denominator scores 0.
pub fn macro_scores(y_true: &[usize], y_pred: &[usize], k: usize) -> Scores {
    let m = confusion_matrix(y_true, y_pred, k);
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut f_sum = 0.0;
    let mut present = 0;
    let mut correct = 0;
    for c in 0..k {
        let tp = m[c][c];
        correct += tp;
        let actual: usize = m[c].iter().sum();
        let predicted: usize = m.iter().map(|row| row[c]).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        present += 1;
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        p_sum += p;
        r_sum += r;
        f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let denom = present.max(1) as f64;
    Scores {
        precision: p_sum / denom,
        recall: r_sum / denom,
        f1: f_sum / denom,
        accuracy: ratio(correct, y_true.len()),
    }
}
