use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::EmotionEmbedding;
use crate::numerics::{dot, gelu_grad, gelu_matrix, norm, Init, Linear, Matrix, ParamStore};

const NORM_FLOOR: f64 = 1e-12;

/// Which per-frame parameters feed the mapping network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingInput {
    /// Expression block ψ only.
    #[default]
    Expression,
    /// The full β‖ψ‖θ frame.
    FullParams,
}

/// Two-layer GELU MLP applied to the temporal mean of its input rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MappingNetwork {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MappingTrace {
    frames: usize,
    pooled: Matrix,
    pre: Matrix,
    hidden: Matrix,
    pub output: EmotionEmbedding,
}

impl MappingNetwork {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::invalid("mapping hidden width must be at least 1"));
        }
        let fc1 = Linear::register(store, &format!("{prefix}.fc1"), in_dim, hidden, Init::Scaled(1.0), rng)?;
        let fc2 = Linear::register(store, &format!("{prefix}.fc2"), hidden, out_dim, Init::Scaled(1.0), rng)?;
        // random hidden biases keep the output nonzero for an all-zero input,
        // which is what a zero-initialised denoiser produces at step 0
        for b in store.value_data_mut(fc1.bias) {
            *b = StandardNormal.sample(rng);
        }
        Ok(Self { fc1, fc2 })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            fc1: Linear::lookup(store, &format!("{prefix}.fc1"))?,
            fc2: Linear::lookup(store, &format!("{prefix}.fc2"))?,
        })
    }

    pub fn in_dim(&self, store: &ParamStore) -> usize {
        self.fc1.in_dim(store)
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        self.fc2.out_dim(store)
    }

    pub fn forward(&self, store: &ParamStore, seq: &Matrix) -> Result<MappingTrace> {
        if seq.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        if seq.cols() != self.in_dim(store) {
            return Err(Error::shape(format!(
                "mapping network expects {} inputs per frame, got {}",
                self.in_dim(store),
                seq.cols()
            )));
        }
        // mean taken as offsets from the first row so repeated frames pool exactly
        let first = seq.row(0);
        let inv = 1.0 / seq.rows() as f64;
        let pooled = Matrix::from_fn(1, seq.cols(), |_, j| {
            first[j] + (1..seq.rows()).map(|t| seq.get(t, j) - first[j]).sum::<f64>() * inv
        });
        let pre = self.fc1.forward(store, &pooled)?;
        let hidden = gelu_matrix(&pre);
        let out = self.fc2.forward(store, &hidden)?;
        Ok(MappingTrace {
            frames: seq.rows(),
            pooled,
            pre,
            hidden,
            output: EmotionEmbedding::new(out.into_data())?,
        })
    }

    /// Accumulates parameter gradients and returns `dL/dseq` (`T × in`).
    pub fn backward(&self, store: &mut ParamStore, trace: &MappingTrace, d_out: &[f64]) -> Result<Matrix> {
        let d_out = Matrix::new(1, d_out.len(), d_out.to_vec())?;
        let d_hidden = self.fc2.backward(store, &trace.hidden, &d_out)?;
        let d_pre = Matrix::from_fn(1, d_hidden.cols(), |_, j| {
            d_hidden.get(0, j) * gelu_grad(trace.pre.get(0, j))
        });
        let d_pooled = self.fc1.backward(store, &trace.pooled, &d_pre)?;
        let inv = 1.0 / trace.frames as f64;
        Ok(Matrix::from_fn(trace.frames, d_pooled.cols(), |_, j| d_pooled.get(0, j) * inv))
    }
}

pub fn mapping_forward(net: &MappingNetwork, store: &ParamStore, psi_seq: &Matrix) -> Result<EmotionEmbedding> {
    Ok(net.forward(store, psi_seq)?.output)
}

pub fn emo_loss(e_pred: &EmotionEmbedding, e_target: &EmotionEmbedding) -> Result<f64> {
    emo_loss_grad(e_pred, e_target).map(|(l, _)| l)
}

/// `1 − cos(e_pred, e_target)` and its gradient with respect to `e_pred`.
pub fn emo_loss_grad(e_pred: &EmotionEmbedding, e_target: &EmotionEmbedding) -> Result<(f64, Vec<f64>)> {
    if e_pred.dim() != e_target.dim() {
        return Err(Error::shape(format!(
            "embedding dimensions differ: {} vs {}",
            e_pred.dim(),
            e_target.dim()
        )));
    }
    let (a, b) = (e_pred.as_slice(), e_target.as_slice());
    let (na, nb) = (norm(a), norm(b));
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return Err(Error::Degenerate("undefined cosine for a zero-norm embedding".into()));
    }
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    let grad = a.iter().zip(b).map(|(ai, bi)| -(bi / (na * nb) - cos * ai / (na * na))).collect();
    Ok((1.0 - cos, grad))
}
