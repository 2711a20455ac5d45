use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::denoiser::Conditioning;
use super::model::{DiffusionModel, ModelArch};
use super::optim::{adamw_update, AdamWConfig, OptimizerState};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::facemodel::{BlendshapeModel, ParamSequence};
use crate::losses::{
    accel_loss_grad, emo_loss_grad, mesh_loss_grad, normal_loss_grad, recon_loss, recon_loss_grad,
    sample_train_mode_with, total_loss, velocity_loss_grad, FrameMask, LossComponents, LossWeights, TrainMode,
};
use crate::manifold::{edit, Edit, EditDirection, EditRequest, EditVectorDictionary, EmotionEmbedding};
use crate::numerics::{Matrix, ParamStore};

/// One training sequence with its conditioning and emotion target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub x0: ParamSequence,
    pub audio: Matrix,
    pub emotion: EmotionEmbedding,
    pub label: usize,
    pub mask: FrameMask,
}

impl TrainSample {
    pub fn identity(&self, n_id: usize) -> Vec<f64> {
        self.x0.values().row(0)[..n_id].to_vec()
    }

    pub fn conditioning(&self, emotion: EmotionEmbedding, n_id: usize) -> Result<Conditioning> {
        Conditioning::new(self.audio.clone(), emotion, self.identity(n_id))
    }
}

/// Read-only state shared by every training step.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub face: &'a BlendshapeModel,
    pub schedule: &'a NoiseSchedule,
    /// Needed when edited-mode steps can occur.
    pub dictionary: Option<&'a EditVectorDictionary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub dual_train: bool,
    /// Probability of an Original-mode step under dual training.
    pub p_original: f64,
    /// Forces every sample into one mode, regardless of `dual_train`.
    pub mode_override: Option<TrainMode>,
    /// Edited-mode strengths are drawn from `U[0, edit_alpha_max]`.
    pub edit_alpha_max: f64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            dual_train: true,
            p_original: 0.5,
            mode_override: None,
            edit_alpha_max: 5.0,
            optimizer: AdamWConfig::default(),
        }
    }
}

/// Random choices for one sample in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub t: usize,
    pub eps: Matrix,
    pub mode: TrainMode,
    /// Conditioning emotion; also the target of the emotion loss.
    pub emotion: EmotionEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOutcome {
    pub mode: TrainMode,
    pub components: LossComponents,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Mean per-sample objective.
    pub total: f64,
    /// Mean components over Original-mode samples (zero if there were none).
    pub original: LossComponents,
    /// Mean emotion loss over Edited-mode samples (zero if there were none).
    pub edited_emo: f64,
    pub n_original: usize,
    pub n_edited: usize,
    pub lr: f64,
}

/// Pushes `e` toward a random other class along the pairwise boundary normal.
pub fn sample_edit<R: Rng + ?Sized>(
    dict: &EditVectorDictionary,
    e: &EmotionEmbedding,
    label: usize,
    alpha_max: f64,
    rng: &mut R,
) -> Result<EmotionEmbedding> {
    let k = dict.num_classes();
    if label >= k {
        return Err(Error::invalid(format!("label {label} outside {k} classes")));
    }
    let mut target = rng.random_range(0..k - 1);
    if target >= label {
        target += 1;
    }
    let alpha = rng.random::<f64>() * alpha_max;
    let direction = if dict.direction(EditDirection::Pair(label, target)).is_ok() {
        EditDirection::Pair(label, target)
    } else {
        EditDirection::Class(target)
    };
    edit(&EditRequest { base: e.clone(), edits: vec![Edit { direction, alpha }] }, dict)
}

pub fn draw_sample<R: Rng + ?Sized>(
    sample: &TrainSample,
    ctx: &TrainContext,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<SampleDraw> {
    let t = rng.random_range(0..ctx.schedule.steps());
    let (rows, cols) = sample.x0.values().shape();
    let eps = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    let mode = match (cfg.mode_override, cfg.dual_train) {
        (Some(m), _) => m,
        (None, true) => sample_train_mode_with(rng, cfg.p_original),
        (None, false) => TrainMode::Original,
    };
    let emotion = match mode {
        TrainMode::Original => sample.emotion.clone(),
        TrainMode::Edited => {
            let dict = ctx
                .dictionary
                .ok_or_else(|| Error::invalid("edited-mode training needs an edit dictionary"))?;
            sample_edit(dict, &sample.emotion, sample.label, cfg.edit_alpha_max, rng)?
        }
    };
    Ok(SampleDraw { t, eps, mode, emotion })
}

impl ModelArch {
    /// Loss of one sample under fixed random draws; with `with_grad` the
    /// gradient is accumulated into `store`.
    pub fn sample_objective(
        &self,
        store: &mut ParamStore,
        ctx: &TrainContext,
        weights: &LossWeights,
        sample: &TrainSample,
        draw: &SampleDraw,
        with_grad: bool,
    ) -> Result<SampleOutcome> {
        let layout = self.config.layout;
        let x_t = ctx.schedule.q_sample(sample.x0.values(), draw.t, &draw.eps)?;
        let cond = sample.conditioning(draw.emotion.clone(), layout.n_id)?;
        let trace = self.denoise(store, &x_t, draw.t, &cond)?;
        let pred = ParamSequence::new(trace.output.clone())?;

        let map = self.map_emotion(store, pred.values())?;
        let (emo, d_emo) = emo_loss_grad(&map.output, &draw.emotion)?;
        let mut c = LossComponents { emo, ..Default::default() };
        let mut d_pred = Matrix::zeros(pred.frames(), pred.dim());

        if draw.mode == TrainMode::Original {
            let (recon, d_recon) = recon_loss_grad(&pred, &sample.x0, &sample.mask)?;
            let mesh_pred = ctx.face.decode_sequence(&pred)?;
            let mesh_gt = ctx.face.decode_sequence(&sample.x0)?;
            let faces = ctx.face.faces();
            let (mesh, d_mesh) = mesh_loss_grad(&mesh_pred, &mesh_gt)?;
            let (normal, d_normal) = normal_loss_grad(&mesh_pred, &mesh_gt, faces)?;
            let (vel, d_vel) = velocity_loss_grad(&mesh_pred, &mesh_gt)?;
            let (acc, d_acc) = accel_loss_grad(&mesh_pred, &mesh_gt)?;
            c = LossComponents { recon, mesh, normal, vel, acc, emo };
            if with_grad {
                let mut d_vertices = d_mesh.scale(weights.lambda_mesh);
                d_vertices.axpy(weights.lambda_normal, &d_normal)?;
                d_vertices.axpy(weights.lambda_vel, &d_vel)?;
                d_vertices.axpy(weights.lambda_acc, &d_acc)?;
                d_pred = ctx.face.decode_backward(&d_vertices)?;
                d_pred.axpy(weights.lambda_recon, &d_recon)?;
            }
        }
        let total = total_loss(&c, weights, draw.mode);
        if !total.is_finite() || !c.is_finite() {
            return Err(Error::NonFinite(format!("loss components {c:?} (mode {:?})", draw.mode)));
        }
        if with_grad {
            let d_emb: Vec<f64> = d_emo.iter().map(|g| g * weights.lambda_emo).collect();
            let d_view = self.mapping.backward(store, &map, &d_emb)?;
            self.mapping_view_backward(&d_view, &mut d_pred)?;
            self.denoiser.backward(store, &trace, &d_pred)?;
        }
        Ok(SampleOutcome { mode: draw.mode, components: c, total })
    }
}

/// One optimizer step on the mean objective of `batch`.
///
/// Per-sample gradients are computed in parallel and summed in sample order,
/// so results do not depend on the thread count.
pub fn training_step<R: Rng + ?Sized>(
    model: &mut DiffusionModel,
    opt: &mut OptimizerState,
    batch: &[TrainSample],
    ctx: &TrainContext,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut R,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let draws = batch
        .iter()
        .map(|s| draw_sample(s, ctx, cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    let arch = model.arch;
    let base = &model.params;
    let results = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(sample, draw)| {
            let mut local = base.clone();
            local.zero_grad();
            let out = arch.sample_objective(&mut local, ctx, &cfg.weights, sample, draw, true)?;
            Ok((out, local.flat_grad()))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.params.num_scalars()];
    let mut report = StepReport {
        total: 0.0,
        original: LossComponents::default(),
        edited_emo: 0.0,
        n_original: 0,
        n_edited: 0,
        lr,
    };
    for (out, g) in &results {
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += gi / n;
        }
        report.total += out.total / n;
        match out.mode {
            TrainMode::Original => {
                report.n_original += 1;
                let o = &mut report.original;
                let c = &out.components;
                o.recon += c.recon;
                o.mesh += c.mesh;
                o.normal += c.normal;
                o.vel += c.vel;
                o.acc += c.acc;
                o.emo += c.emo;
            }
            TrainMode::Edited => {
                report.n_edited += 1;
                report.edited_emo += out.components.emo;
            }
        }
    }
    if report.n_original > 0 {
        let k = report.n_original as f64;
        let o = &mut report.original;
        for v in [&mut o.recon, &mut o.mesh, &mut o.normal, &mut o.vel, &mut o.acc, &mut o.emo] {
            *v /= k;
        }
    }
    if report.n_edited > 0 {
        report.edited_emo /= report.n_edited as f64;
    }
    model.params.set_flat_grad(&grad)?;
    adamw_update(&mut model.params, opt, lr, &cfg.optimizer)?;
    Ok(report)
}

/// x₀-predictions for `samples` with `(t, eps)` drawn from a generator
/// seeded by `seed`, so repeated calls are comparable.
pub fn seeded_predictions(
    model: &DiffusionModel,
    samples: &[TrainSample],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<ParamSequence>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_id = model.config().layout.n_id;
    samples
        .iter()
        .map(|s| {
            let t = rng.random_range(0..schedule.steps());
            let (rows, cols) = s.x0.values().shape();
            let eps = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
            let x_t = schedule.q_sample(s.x0.values(), t, &eps)?;
            let cond = s.conditioning(s.emotion.clone(), n_id)?;
            ParamSequence::new(model.arch.denoise(&model.params, &x_t, t, &cond)?.output)
        })
        .collect()
}

/// Mean masked x₀-prediction MSE; see [`seeded_predictions`].
pub fn validation_recon(model: &DiffusionModel, samples: &[TrainSample], schedule: &NoiseSchedule, seed: u64) -> Result<f64> {
    let preds = seeded_predictions(model, samples, schedule, seed)?;
    let mut total = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        total += recon_loss(p, &s.x0, &s.mask)?;
    }
    Ok(total / samples.len() as f64)
}
