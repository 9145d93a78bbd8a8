//! Multi-layer perceptron with ReLU hidden layers and a softmax output,
//! trained by Adam on mini-batches.

use nalgebra::{DMatrix, RowDVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::util::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    /// L2 penalty on weights (not biases).
    pub l2: f64,
    /// `None` means min(200, training samples).
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    /// Epochs whose loss does not beat the best by `tol` count as stagnant.
    pub tol: f64,
    pub n_iter_no_change: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: vec![100],
            learning_rate: 1e-3,
            l2: 1e-4,
            batch_size: None,
            max_epochs: 200,
            tol: 1e-4,
            n_iter_no_change: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.iter().any(|&h| h < 1) {
            return Err(invalid!("hidden layer sizes must be at least 1"));
        }
        let rates = [self.learning_rate, self.beta1, self.beta2, self.epsilon];
        if rates.iter().any(|&r| !(r > 0.0)) || self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(invalid!("learning rate, betas and epsilon must be positive; betas below 1"));
        }
        if !(self.l2 >= 0.0) || !(self.tol >= 0.0) {
            return Err(invalid!("l2 and tol must be non-negative"));
        }
        if self.max_epochs < 1 || self.batch_size == Some(0) {
            return Err(invalid!("max_epochs and batch_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// fan_in x fan_out
    w: DMatrix<f64>,
    b: RowDVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    pub n_classes: usize,
    /// Mean training loss per epoch, including the L2 term.
    pub loss_curve: Vec<f64>,
}

struct AdamState {
    m: Vec<(DMatrix<f64>, RowDVector<f64>)>,
    v: Vec<(DMatrix<f64>, RowDVector<f64>)>,
    t: i32,
}

fn relu(mut z: DMatrix<f64>) -> DMatrix<f64> {
    z.apply(|v| *v = v.max(0.0));
    z
}

fn softmax_rows(mut z: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in z.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

impl Mlp {
    /// Forward pass returning every layer's activation, input first.
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = acts.last().unwrap() * &layer.w;
            for mut row in z.row_iter_mut() {
                row += &layer.b;
            }
            let a = if k + 1 == self.layers.len() { softmax_rows(z) } else { relu(z) };
            acts.push(a);
        }
        acts
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward(x).pop().unwrap()
    }

    /// Class index with the highest probability; ties go to the lower index.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let p = self.predict_proba(x);
        p.row_iter()
            .map(|r| {
                let mut best = 0;
                for c in 1..r.len() {
                    if r[c] > r[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Trains on `x` (samples x features) with class indices `y` in [0, n_classes).
    pub fn fit(x: &DMatrix<f64>, y: &[usize], n_classes: usize, cfg: &MlpConfig) -> Result<Mlp> {
        cfg.validate()?;
        let (n, p) = x.shape();
        if n == 0 || y.len() != n {
            return Err(invalid!("MLP needs a non-empty training set with one label per sample"));
        }
        if n_classes < 2 || y.iter().any(|&c| c >= n_classes) {
            return Err(invalid!("labels must lie in [0, {n_classes}) with at least 2 classes"));
        }
        let mut g = rng(cfg.seed);
        let mut sizes = vec![p];
        sizes.extend(&cfg.hidden_layers);
        sizes.push(n_classes);
        let layers: Vec<Layer> = sizes
            .windows(2)
            .map(|s| {
                let bound = (6.0 / (s[0] + s[1]) as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(s[0], s[1], |_, _| g.random_range(-bound..bound)),
                    b: RowDVector::from_fn(s[1], |_, _| g.random_range(-bound..bound)),
                }
            })
            .collect();
        let mut adam = AdamState {
            m: layers.iter().map(|l| (l.w.map(|_| 0.0), l.b.map(|_| 0.0))).collect(),
            v: layers.iter().map(|l| (l.w.map(|_| 0.0), l.b.map(|_| 0.0))).collect(),
            t: 0,
        };
        let mut net = Mlp {
            layers,
            n_classes,
            loss_curve: Vec::new(),
        };
        let batch = cfg.batch_size.unwrap_or(200).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        let mut stagnant = 0;
        for _ in 0..cfg.max_epochs {
            order.shuffle(&mut g);
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                let xb = x.select_rows(chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
                total += net.step(&xb, &yb, cfg, &mut adam) * chunk.len() as f64;
            }
            let loss = total / n as f64;
            net.loss_curve.push(loss);
            if loss > best - cfg.tol {
                stagnant += 1;
            } else {
                stagnant = 0;
            }
            best = best.min(loss);
            if stagnant >= cfg.n_iter_no_change {
                break;
            }
        }
        Ok(net)
    }

    /// One Adam update on a batch; returns the batch loss before the update.
    fn step(&mut self, x: &DMatrix<f64>, y: &[usize], cfg: &MlpConfig, adam: &mut AdamState) -> f64 {
        let nb = x.nrows() as f64;
        let acts = self.forward(x);
        let out = acts.last().unwrap();
        let mut loss = 0.0;
        for (i, &c) in y.iter().enumerate() {
            loss -= out[(i, c)].clamp(1e-300, 1.0).ln();
        }
        loss /= nb;
        let wsq: f64 = self.layers.iter().map(|l| l.w.norm_squared()).sum();
        loss += 0.5 * cfg.l2 * wsq / nb;

        // softmax + cross-entropy gradient
        let mut delta = out.clone();
        for (i, &c) in y.iter().enumerate() {
            delta[(i, c)] -= 1.0;
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let gw = (acts[k].transpose() * &delta + &self.layers[k].w * cfg.l2) / nb;
            let gb = delta.row_sum() / nb;
            if k > 0 {
                let mut next = &delta * self.layers[k].w.transpose();
                next.zip_apply(&acts[k], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = next;
            }
            grads.push((gw, gb));
        }
        grads.reverse();

        adam.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let lr = cfg.learning_rate * (1.0 - b2.powi(adam.t)).sqrt() / (1.0 - b1.powi(adam.t));
        for (k, (gw, gb)) in grads.into_iter().enumerate() {
            let (mw, mb) = &mut adam.m[k];
            let (vw, vb) = &mut adam.v[k];
            *mw = &*mw * b1 + &gw * (1.0 - b1);
            *mb = &*mb * b1 + &gb * (1.0 - b1);
            *vw = &*vw * b2 + gw.component_mul(&gw) * (1.0 - b2);
            *vb = &*vb * b2 + gb.component_mul(&gb) * (1.0 - b2);
            let layer = &mut self.layers[k];
            layer.w.zip_zip_apply(mw, vw, |w, m, v| *w -= lr * m / (v.sqrt() + cfg.epsilon));
            layer.b.zip_zip_apply(mb, vb, |b, m, v| *b -= lr * m / (v.sqrt() + cfg.epsilon));
        }
        loss
    }
}
