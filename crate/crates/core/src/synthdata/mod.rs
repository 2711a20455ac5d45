//! Deterministic synthetic stand-in for real audio/emotion encoders and 4D captures.
//!
//! Every sample draws from its own ChaCha stream `(seed, 1 + index)`; the shared
//! "world" (centroids, expression templates, audio readout, identities) uses stream 0
//! and the train/validation split uses the last stream. All stored values are
//! rounded to `f32` at generation time, so a saved dataset reloads bit-identically.

mod io;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::TrainSample;
use crate::error::{Error, Result};
use crate::facemodel::{BlendshapeModel, ParamLayout, ParamSequence};
use crate::losses::FrameMask;
use crate::manifold::{EmotionEmbedding, LabeledEmbeddingSet};
use crate::metrics::ch_index;
use crate::numerics::Matrix;

pub use io::{load_dataset, save_dataset, DatasetManifest, SampleEntry, FACE_MODEL_FILE, MANIFEST_FILE};

const SPLIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub emo_dim: usize,
    pub audio_dim: usize,
    pub frames: usize,
    pub samples_per_class: usize,
    /// Distance between any two class centroids in embedding units.
    pub separation: f64,
    /// Per-coordinate std of embeddings around their centroid.
    pub noise: f64,
    pub seed: u64,
    pub identities: usize,
    /// Std of the per-class expression templates.
    pub expression_scale: f64,
    /// Per-coordinate std of the audio readout's contribution to ψ. Zero freezes articulation.
    pub articulation: f64,
    /// Lag-one correlation of the audio walk, in `[0, 1)`.
    pub audio_smoothing: f64,
    pub identity_scale: f64,
    pub pose_noise: f64,
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            emo_dim: 16,
            audio_dim: 8,
            frames: 32,
            samples_per_class: 40,
            separation: 4.0,
            noise: 0.5,
            seed: 0,
            identities: 4,
            expression_scale: 0.8,
            articulation: 0.6,
            audio_smoothing: 0.85,
            identity_scale: 0.5,
            pose_noise: 0.05,
            val_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synth config: {m}")));
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.emo_dim < self.classes.max(2) {
            return bad("emo_dim must be at least the class count");
        }
        if self.audio_dim == 0 || self.frames < 3 || self.identities == 0 {
            return bad("audio_dim, identities must be positive and frames at least 3");
        }
        if !(self.separation > 0.0) {
            return bad("separation must be positive");
        }
        let nonneg = [self.noise, self.expression_scale, self.articulation, self.identity_scale, self.pose_noise];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("scales must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.audio_smoothing) {
            return bad("audio_smoothing must lie in [0, 1)");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        let val = self.val_per_class();
        if val == 0 || val >= self.samples_per_class {
            return bad("both splits need at least one sample per class");
        }
        Ok(())
    }

    pub fn val_per_class(&self) -> usize {
        (self.samples_per_class as f64 * self.val_fraction).round() as usize
    }

    pub fn class_names(&self) -> Vec<String> {
        if self.classes == 3 {
            return ["neutral", "happy", "sad"].map(String::from).to_vec();
        }
        (0..self.classes).map(|k| format!("class_{k}")).collect()
    }

    pub fn num_samples(&self) -> usize {
        self.classes * self.samples_per_class
    }

    fn sample_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 + index as u64);
        rng
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * normal(rng))
}

/// Shared generative structure of one synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    /// `K × d_emo`, pairwise distance `separation`.
    pub centroids: Matrix,
    /// `K × n_exp` class expression offsets.
    pub templates: Matrix,
    /// `n_exp × d_audio` linear map from audio frame to articulation.
    pub readout: Matrix,
    /// `identities × n_id` shape coefficients.
    pub identities: Matrix,
}

impl SynthWorld {
    pub fn generate(cfg: &SynthConfig, layout: ParamLayout) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let centroids = orthonormal_rows(cfg.classes, cfg.emo_dim, &mut rng)?
            .scale(cfg.separation / std::f64::consts::SQRT_2)
            .round_to_f32();
        let templates = gaussian(cfg.classes, layout.n_exp, cfg.expression_scale, &mut rng).round_to_f32();
        let readout =
            gaussian(layout.n_exp, cfg.audio_dim, cfg.articulation / (cfg.audio_dim as f64).sqrt(), &mut rng)
                .round_to_f32();
        let identities = gaussian(cfg.identities, layout.n_id, cfg.identity_scale, &mut rng).round_to_f32();
        Ok(Self { centroids, templates, readout, identities })
    }
}

/// Gram-Schmidt on Gaussian rows; `k ≤ d`.
fn orthonormal_rows(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        for u in &out {
            let p = crate::numerics::dot(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let n = crate::numerics::norm(&v);
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Matrix::from_rows(&out)
}

/// Source of per-frame audio features. The synthetic generator below stands in
/// for a pretrained speech encoder.
pub trait FeatureProvider {
    fn audio_dim(&self) -> usize;
    fn audio_features(&self, frames: usize, seed: u64) -> Result<Matrix>;
}

/// Unit-variance first-order low-pass filtered Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthAudio {
    pub dim: usize,
    pub smoothing: f64,
}

impl SynthAudio {
    pub fn from_config(cfg: &SynthConfig) -> Self {
        Self { dim: cfg.audio_dim, smoothing: cfg.audio_smoothing }
    }

    pub fn walk(&self, frames: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let rho = self.smoothing;
        let innov = (1.0 - rho * rho).sqrt();
        let mut out = Matrix::zeros(frames, self.dim);
        for t in 0..frames {
            for j in 0..self.dim {
                let prev = if t == 0 { 0.0 } else { out.get(t - 1, j) };
                let step = if t == 0 { normal(rng) } else { rho * prev + innov * normal(rng) };
                out.set(t, j, step);
            }
        }
        out.round_to_f32()
    }
}

impl FeatureProvider for SynthAudio {
    fn audio_dim(&self) -> usize {
        self.dim
    }

    fn audio_features(&self, frames: usize, seed: u64) -> Result<Matrix> {
        if frames == 0 {
            return Err(Error::invalid("need at least one frame"));
        }
        Ok(self.walk(frames, &mut ChaCha8Rng::seed_from_u64(seed)))
    }
}

/// Labelled embeddings: sample `i` of class `k` is `centroid_k + noise·N(0, I)`.
pub fn gen_embeddings(cfg: &SynthConfig) -> Result<LabeledEmbeddingSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centroids = orthonormal_rows(cfg.classes, cfg.emo_dim, &mut rng)?
        .scale(cfg.separation / std::f64::consts::SQRT_2)
        .round_to_f32();
    embeddings_from(cfg, &centroids)
}

fn sample_embedding(cfg: &SynthConfig, centroids: &Matrix, index: usize) -> Vec<f64> {
    let label = index / cfg.samples_per_class;
    let mut rng = cfg.sample_rng(index);
    centroids.row(label).iter().map(|c| ((c + cfg.noise * normal(&mut rng)) as f32) as f64).collect()
}

fn embeddings_from(cfg: &SynthConfig, centroids: &Matrix) -> Result<LabeledEmbeddingSet> {
    let rows: Vec<Vec<f64>> = (0..cfg.num_samples()).map(|i| sample_embedding(cfg, centroids, i)).collect();
    let labels = (0..cfg.num_samples()).map(|i| i / cfg.samples_per_class).collect();
    LabeledEmbeddingSet::new(Matrix::from_rows(&rows)?, labels, cfg.class_names())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub audio: Matrix,
    pub e_gt: EmotionEmbedding,
    pub label: usize,
    pub identity: usize,
    pub params_gt: ParamSequence,
    pub mask: FrameMask,
}

impl SynthSample {
    pub fn to_train_sample(&self) -> TrainSample {
        TrainSample {
            x0: self.params_gt.clone(),
            audio: self.audio.clone(),
            emotion: self.e_gt.clone(),
            label: self.label,
            mask: self.mask.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub layout: ParamLayout,
    pub class_names: Vec<String>,
    pub world: SynthWorld,
    pub samples: Vec<SynthSample>,
    pub split: Split,
    /// CH index of the emitted embedding set.
    pub embedding_ch: f64,
}

impl SynthDataset {
    pub fn embeddings(&self) -> Result<LabeledEmbeddingSet> {
        let rows: Vec<Vec<f64>> = self.samples.iter().map(|s| s.e_gt.to_vec()).collect();
        let labels = self.samples.iter().map(|s| s.label).collect();
        LabeledEmbeddingSet::new(Matrix::from_rows(&rows)?, labels, self.class_names.clone())
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<&SynthSample> {
        indices.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn train_samples(&self) -> Vec<TrainSample> {
        self.subset(&self.split.train).into_iter().map(SynthSample::to_train_sample).collect()
    }
}

/// ψ(t) = template_label + R·a(t); β fixed per identity; θ a small low-pass walk.
fn gen_sample(cfg: &SynthConfig, world: &SynthWorld, layout: ParamLayout, index: usize) -> Result<SynthSample> {
    let label = index / cfg.samples_per_class;
    let identity = index % cfg.identities;
    let e_gt = EmotionEmbedding::new(sample_embedding(cfg, &world.centroids, index))?;
    let mut rng = cfg.sample_rng(index);
    // the embedding consumed the head of this stream
    for _ in 0..cfg.emo_dim {
        normal(&mut rng);
    }
    let audio = SynthAudio::from_config(cfg).walk(cfg.frames, &mut rng);
    let artic = audio.matmul_nt(&world.readout)?;
    let pose = SynthAudio { dim: layout.n_pose, smoothing: 0.9 }.walk(cfg.frames, &mut rng);
    let mut x = Matrix::zeros(cfg.frames, layout.dim());
    for t in 0..cfg.frames {
        let row = x.row_mut(t);
        row[..layout.n_id].copy_from_slice(world.identities.row(identity));
        for j in 0..layout.n_exp {
            row[layout.n_id + j] = world.templates.get(label, j) + artic.get(t, j);
        }
        for j in 0..layout.n_pose {
            row[layout.n_id + layout.n_exp + j] = cfg.pose_noise * pose.get(t, j);
        }
    }
    Ok(SynthSample {
        audio,
        e_gt,
        label,
        identity,
        params_gt: ParamSequence::new(x.round_to_f32())?,
        mask: FrameMask::full(cfg.frames),
    })
}

fn gen_split(cfg: &SynthConfig) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SPLIT_STREAM);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for k in 0..cfg.classes {
        let mut idx: Vec<usize> = (k * cfg.samples_per_class..(k + 1) * cfg.samples_per_class).collect();
        idx.shuffle(&mut rng);
        let (v, t) = idx.split_at(cfg.val_per_class());
        val.extend_from_slice(v);
        train.extend_from_slice(t);
    }
    train.sort_unstable();
    val.sort_unstable();
    Split { train, val }
}

pub fn gen_dataset(cfg: &SynthConfig, model: &BlendshapeModel) -> Result<SynthDataset> {
    let layout = model.layout();
    if layout.n_exp == 0 || layout.n_id == 0 {
        return Err(Error::invalid("face model needs identity and expression blocks"));
    }
    let world = SynthWorld::generate(cfg, layout)?;
    let samples = (0..cfg.num_samples())
        .map(|i| gen_sample(cfg, &world, layout, i))
        .collect::<Result<Vec<_>>>()?;
    let set = embeddings_from(cfg, &world.centroids)?;
    let embedding_ch = ch_index(set.embeddings(), set.labels())?;
    Ok(SynthDataset {
        config: cfg.clone(),
        layout,
        class_names: cfg.class_names(),
        world,
        samples,
        split: gen_split(cfg),
        embedding_ch,
    })
}
