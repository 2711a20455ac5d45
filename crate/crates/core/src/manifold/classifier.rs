use serde::{Deserialize, Serialize};

use super::LabeledEmbeddingSet;
use crate::error::{Error, Result};
use crate::numerics::{argmax, cross_entropy, dot, softmax, softmax_in_place, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub l2: f64,
    pub lr: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { l2: 1e-3, lr: 0.5, max_iters: 2000, tol: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub final_loss: f64,
    pub l2: f64,
    pub seed: u64,
}

/// Multinomial linear classifier; row `k` of `weights` is the boundary normal `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub meta: TrainingMeta,
}

impl LinearClassifier {
    pub fn new(weights: Matrix, bias: Vec<f64>, meta: TrainingMeta) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape("bias length must equal class count"));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("classifier parameters".into()));
        }
        Ok(Self { weights, bias, meta })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// `f_k(e) = w_kᵀ e + b_k`.
    pub fn logit(&self, e: &[f64], k: usize) -> f64 {
        dot(self.weights.row(k), e) + self.bias[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub argmax: usize,
}

pub fn classify(e: &[f64], clf: &LinearClassifier) -> Result<Classification> {
    if e.len() != clf.dim() {
        return Err(Error::shape(format!(
            "embedding has dimension {}, classifier expects {}",
            e.len(),
            clf.dim()
        )));
    }
    let logits: Vec<f64> = (0..clf.num_classes()).map(|k| clf.logit(e, k)).collect();
    let probs = softmax(&logits)?;
    let argmax = argmax(&logits);
    Ok(Classification { logits, probs, argmax })
}

/// Full-batch gradient descent on mean cross-entropy + (l2/2)‖W‖², from zero.
pub fn train_classifier(set: &LabeledEmbeddingSet, cfg: &ClassifierConfig) -> Result<LinearClassifier> {
    let k = set.num_classes();
    if k < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if !(cfg.lr > 0.0 && cfg.l2 >= 0.0 && cfg.lr.is_finite() && cfg.l2.is_finite()) {
        return Err(Error::invalid("classifier config must have lr > 0 and l2 >= 0"));
    }
    let x = set.embeddings();
    let (n, d) = x.shape();
    let inv_n = 1.0 / n as f64;
    let mut w = Matrix::zeros(k, d);
    let mut b = vec![0.0; k];
    let mut iterations = 0;
    let mut final_loss = f64::NAN;

    for iter in 0..cfg.max_iters {
        let logits = x.matmul_nt(&w)?;
        let mut loss = 0.0;
        // Becomes (P − Y)/N.
        let mut g = Matrix::zeros(n, k);
        for (i, &y) in set.labels().iter().enumerate() {
            let row = g.row_mut(i);
            for (c, v) in row.iter_mut().enumerate() {
                *v = logits.get(i, c) + b[c];
            }
            softmax_in_place(row);
            loss += cross_entropy(row, y)?;
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v *= inv_n;
            }
        }
        loss = loss * inv_n + 0.5 * cfg.l2 * w.frobenius_sq();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("classifier loss at iteration {iter}")));
        }
        final_loss = loss;
        let mut grad_w = g.matmul_tn(x)?;
        grad_w.axpy(cfg.l2, &w)?;
        let grad_b = g.col_sums();
        let inf_norm = grad_w.max_abs().max(grad_b.max_abs());
        if inf_norm < cfg.tol {
            break;
        }
        w.axpy(-cfg.lr, &grad_w)?;
        for (bv, gv) in b.iter_mut().zip(grad_b.data()) {
            *bv -= cfg.lr * gv;
        }
        iterations = iter + 1;
    }

    LinearClassifier::new(
        w,
        b,
        TrainingMeta { iterations, final_loss, l2: cfg.l2, seed: cfg.seed },
    )
}

/// Fraction of the set assigned its own label (training accuracy when `set` is the training set).
pub fn accuracy(set: &LabeledEmbeddingSet, clf: &LinearClassifier) -> Result<f64> {
    let mut correct = 0;
    for (i, &y) in set.labels().iter().enumerate() {
        if classify(set.embeddings().row(i), clf)?.argmax == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}
