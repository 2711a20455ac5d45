//! Held-out evaluation: deterministic generations for the validation split scored against ground truth.

use std::collections::BTreeMap;

use anyhow::{ensure, Result};
use eet_core::diffusion::{sample, Conditioning, DiffusionModel, NoiseSchedule, OutputInit, SampleMode};
use eet_core::facemodel::{BlendshapeModel, ParamSequence};
use eet_core::losses::emo_loss;
use eet_core::metrics::{evaluate, sequence_metrics, MetricCounts, MetricsConfig, MetricsReport};
use eet_core::synthdata::SynthDataset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSource {
    /// The checkpoint's denoiser.
    Model,
    /// Ground truth scored against itself.
    GroundTruth,
    /// A freshly initialised model with a random output projection.
    Untrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub ve_mm: f64,
    pub lve_mm: f64,
    pub mod_mm: f64,
    pub fdd: f64,
    pub sequences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: EvalSource,
    pub split: String,
    pub ve_mm: f64,
    pub lve_mm: f64,
    pub mod_mm: f64,
    pub fdd: f64,
    pub delta_ch: f64,
    /// Mean cosine loss between the mapping-network embedding of each output and its target embedding.
    pub emo_loss: f64,
    pub counts: MetricCounts,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

impl EvalReport {
    pub fn metrics(&self) -> MetricsReport {
        MetricsReport {
            ve_mm: self.ve_mm,
            lve_mm: self.lve_mm,
            mod_mm: self.mod_mm,
            fdd: self.fdd,
            delta_ch: self.delta_ch,
            counts: self.counts,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.metrics().is_valid()
            && self.emo_loss.is_finite()
            && self.per_class.values().all(|c| [c.ve_mm, c.lve_mm, c.mod_mm, c.fdd].iter().all(|v| v.is_finite() && *v >= 0.0))
    }
}

/// Deterministic generations for `indices`; sequence `j` uses seed `eval_seed + j` and the
/// sample's own audio, target embedding and identity coefficients.
pub fn predict(
    model: &DiffusionModel,
    schedule: &NoiseSchedule,
    ds: &SynthDataset,
    indices: &[usize],
    eval_seed: u64,
) -> Result<Vec<ParamSequence>> {
    let n_id = model.config().layout.n_id;
    let dim = model.config().layout.dim();
    indices
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let s = ds.samples[i].to_train_sample();
            let cond = Conditioning::new(s.audio.clone(), s.emotion.clone(), s.identity(n_id))?;
            let mut rng = ChaCha8Rng::seed_from_u64(eval_seed.wrapping_add(j as u64));
            Ok(sample(model, &cond, schedule, &mut rng, SampleMode::Deterministic, s.audio.rows(), dim)?)
        })
        .collect()
}

/// The untrained baseline: same architecture and seed, random output projection.
pub fn untrained_model(trained: &DiffusionModel, seed: u64) -> Result<DiffusionModel> {
    let mut cfg = *trained.config();
    cfg.denoiser.output_init = OutputInit::Random;
    Ok(DiffusionModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

pub fn evaluate_split(
    model: &DiffusionModel,
    schedule: &NoiseSchedule,
    ds: &SynthDataset,
    face: &BlendshapeModel,
    metrics: &MetricsConfig,
    eval_seed: u64,
    source: EvalSource,
) -> Result<EvalReport> {
    let indices = &ds.split.val;
    ensure!(!indices.is_empty(), "the evaluation split is empty");
    let gt: Vec<ParamSequence> = indices.iter().map(|&i| ds.samples[i].params_gt.clone()).collect();
    let labels: Vec<usize> = indices.iter().map(|&i| ds.samples[i].label).collect();
    let pred = match source {
        EvalSource::GroundTruth => gt.clone(),
        EvalSource::Model | EvalSource::Untrained => predict(model, schedule, ds, indices, eval_seed)?,
    };
    let report = evaluate(&pred, &gt, &labels, face, metrics)?;

    let mut emo = 0.0;
    let mut per_class: BTreeMap<String, ClassMetrics> = BTreeMap::new();
    for ((p, g), &i) in pred.iter().zip(&gt).zip(indices) {
        let s = &ds.samples[i];
        emo += emo_loss(&model.embed(p)?, &s.e_gt)?;
        let m = sequence_metrics(&face.decode_sequence(p)?, &face.decode_sequence(g)?, face, metrics)?;
        let c = per_class.entry(ds.class_names[s.label].clone()).or_insert(ClassMetrics {
            ve_mm: 0.0,
            lve_mm: 0.0,
            mod_mm: 0.0,
            fdd: 0.0,
            sequences: 0,
        });
        c.ve_mm += m.ve_mm;
        c.lve_mm += m.lve_mm;
        c.mod_mm += m.mod_mm;
        c.fdd += m.fdd;
        c.sequences += 1;
    }
    for c in per_class.values_mut() {
        let n = c.sequences as f64;
        c.ve_mm /= n;
        c.lve_mm /= n;
        c.mod_mm /= n;
        c.fdd /= n;
    }
    Ok(EvalReport {
        source,
        split: "val".into(),
        ve_mm: report.ve_mm,
        lve_mm: report.lve_mm,
        mod_mm: report.mod_mm,
        fdd: report.fdd,
        delta_ch: report.delta_ch,
        emo_loss: emo / pred.len() as f64,
        counts: report.counts,
        per_class,
    })
}
