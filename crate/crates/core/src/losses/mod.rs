//! Training objective: parameter, geometric, temporal and emotion losses.

mod geometric;
mod mapping;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crate::facemodel::ParamSequence;
pub use geometric::{
    accel_loss, accel_loss_grad, mesh_loss, mesh_loss_grad, normal_loss, normal_loss_grad, recon_loss,
    recon_loss_grad, velocity_loss, velocity_loss_grad,
};
pub use mapping::{emo_loss, emo_loss_grad, mapping_forward, MappingInput, MappingNetwork, MappingTrace};

/// Per-frame validity; padding frames are `false`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMask(Vec<bool>);

impl FrameMask {
    pub fn new(valid: Vec<bool>) -> Result<Self> {
        if !valid.iter().any(|&v| v) {
            return Err(Error::invalid("frame mask has no valid frames"));
        }
        Ok(Self(valid))
    }

    pub fn full(frames: usize) -> Self {
        Self(vec![true; frames])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_valid(&self, t: usize) -> bool {
        self.0[t]
    }

    pub fn count_valid(&self) -> usize {
        self.0.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_recon: f64,
    pub lambda_mesh: f64,
    pub lambda_normal: f64,
    pub lambda_vel: f64,
    pub lambda_acc: f64,
    pub lambda_emo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_recon: 1.0,
            lambda_mesh: 1.0,
            lambda_normal: 0.1,
            lambda_vel: 0.5,
            lambda_acc: 0.25,
            lambda_emo: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.named() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("loss weight {name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("lambda_recon", self.lambda_recon),
            ("lambda_mesh", self.lambda_mesh),
            ("lambda_normal", self.lambda_normal),
            ("lambda_vel", self.lambda_vel),
            ("lambda_acc", self.lambda_acc),
            ("lambda_emo", self.lambda_emo),
        ]
    }
}

/// Unweighted values of the six loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub recon: f64,
    pub mesh: f64,
    pub normal: f64,
    pub vel: f64,
    pub acc: f64,
    pub emo: f64,
}

impl LossComponents {
    pub fn is_finite(&self) -> bool {
        [self.recon, self.mesh, self.normal, self.vel, self.acc, self.emo]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Original,
    Edited,
}

/// Original: weighted sum of all six terms. Edited: `λ_emo · L_emo` alone.
pub fn total_loss(c: &LossComponents, w: &LossWeights, mode: TrainMode) -> f64 {
    match mode {
        TrainMode::Original => {
            w.lambda_recon * c.recon
                + w.lambda_mesh * c.mesh
                + w.lambda_normal * c.normal
                + w.lambda_vel * c.vel
                + w.lambda_acc * c.acc
                + w.lambda_emo * c.emo
        }
        TrainMode::Edited => w.lambda_emo * c.emo,
    }
}

pub fn sample_train_mode<R: Rng + ?Sized>(rng: &mut R) -> TrainMode {
    sample_train_mode_with(rng, 0.5)
}

/// `Original` with probability `p_original`.
pub fn sample_train_mode_with<R: Rng + ?Sized>(rng: &mut R, p_original: f64) -> TrainMode {
    if rng.random::<f64>() < p_original {
        TrainMode::Original
    } else {
        TrainMode::Edited
    }
}
