use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::denoiser::Conditioning;
use super::model::Denoise;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::facemodel::ParamSequence;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Ancestral,
    #[default]
    Deterministic,
}

/// Reverse diffusion from standard-normal noise with the x₀-parameterised
/// posterior; `Deterministic` drops the noise term.
pub fn sample<D: Denoise + ?Sized, R: Rng + ?Sized>(
    den: &D,
    c: &Conditioning,
    s: &NoiseSchedule,
    rng: &mut R,
    mode: SampleMode,
    frames: usize,
    dim: usize,
) -> Result<ParamSequence> {
    if frames == 0 || dim == 0 {
        return Err(Error::EmptyInput);
    }
    if c.frames() != frames {
        return Err(Error::shape(format!("conditioning has {} frames, asked for {frames}", c.frames())));
    }
    let mut x = Matrix::from_fn(frames, dim, |_, _| StandardNormal.sample(rng));
    for t in (0..s.steps()).rev() {
        let x0 = den.predict_x0(&x, t, c)?;
        if x0.shape() != x.shape() {
            return Err(Error::shape("denoiser output shape differs from its input"));
        }
        let post = s.posterior(t)?;
        let mut next = x0.scale(post.coef_x0);
        next.axpy(post.coef_xt, &x)?;
        if mode == SampleMode::Ancestral && t > 0 {
            let sd = post.variance.sqrt();
            for v in next.data_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += sd * z;
            }
        }
        x = next;
    }
    ParamSequence::new(x)
}
