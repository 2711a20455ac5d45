use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facemodel::ParamSequence;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 50, beta_min: 1e-4, beta_max: 0.02 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

/// Linear-beta noise schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Posterior `q(x_{t−1} | x_t, x_0)` as `coef_x0·x0 + coef_xt·x_t` with the given variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub coef_x0: f64,
    pub coef_xt: f64,
    pub variance: f64,
}

pub fn build_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::invalid(format!("diffusion needs at least 2 steps, got {steps}")));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_min <= beta_max < 1, got {beta_min} and {beta_max}"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
        .collect();
    NoiseSchedule::from_betas(beta)
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas, each in (0, 1).
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 || beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::invalid("betas must be at least 2 values in (0, 1)"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::invalid(format!("step {t} outside [0, {})", self.steps())));
        }
        Ok(())
    }

    pub fn posterior(&self, t: usize) -> Result<Posterior> {
        self.check_step(t)?;
        if t == 0 {
            // exact in closed form; evaluating it would leave rounding residue
            return Ok(Posterior { coef_x0: 1.0, coef_xt: 0.0, variance: 0.0 });
        }
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        let beta = self.beta[t];
        Ok(Posterior {
            coef_x0: ab_prev.sqrt() * beta / (1.0 - ab),
            coef_xt: self.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab),
            variance: (1.0 - ab_prev) / (1.0 - ab) * beta,
        })
    }

    /// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·eps`.
    pub fn q_sample(&self, x0: &Matrix, t: usize, eps: &Matrix) -> Result<Matrix> {
        self.check_step(t)?;
        q_sample_with(x0, self.alpha_bar[t], eps)
    }
}

pub(crate) fn q_sample_with(x0: &Matrix, alpha_bar: f64, eps: &Matrix) -> Result<Matrix> {
    if x0.shape() != eps.shape() {
        return Err(Error::shape("noise and signal differ in shape"));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = x0.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
    Matrix::new(x0.rows(), x0.cols(), data)
}

pub fn q_sample(x0: &ParamSequence, t: usize, eps: &Matrix, s: &NoiseSchedule) -> Result<ParamSequence> {
    ParamSequence::new(s.q_sample(x0.values(), t, eps)?)
}
