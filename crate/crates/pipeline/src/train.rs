//! Classifier → dictionary → diffusion training on a synthetic dataset.

use anyhow::{ensure, Result};
use eet_core::diffusion::{
    cosine_lr, training_step, validation_recon, Checkpoint, DiffusionModel, OptimizerState, TrainContext, TrainSample,
};
use eet_core::facemodel::BlendshapeModel;
use eet_core::manifold::{accuracy, build_dictionary, train_classifier, EditVectorDictionary, LabeledEmbeddingSet};
use eet_core::numerics::Matrix;
use eet_core::synthdata::SynthDataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

pub const CENTROIDS_TENSOR: &str = "data.class_centroids";
pub const IDENTITIES_TENSOR: &str = "data.identities";
/// Seed of the fixed noise draws behind the validation reconstruction loss.
pub const VAL_RECON_SEED: u64 = 7;

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Start { config_sha256: String, train_samples: usize, val_samples: usize, parameters: usize },
    Classifier { iterations: usize, final_loss: f64, train_accuracy: f64 },
    Init { val_recon: f64 },
    Epoch(EpochRecord),
    Done { steps: u64, initial_val_recon: f64, final_val_recon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    /// Mean per-step objective.
    pub total: f64,
    /// Original-mode component means.
    pub recon: f64,
    pub mesh: f64,
    pub normal: f64,
    pub vel: f64,
    pub acc: f64,
    pub emo: f64,
    /// Edited-mode emotion loss mean.
    pub edited_emo: f64,
    pub n_original: usize,
    pub n_edited: usize,
    pub val_recon: f64,
}

pub struct TrainedRun {
    pub model: DiffusionModel,
    pub optimizer: OptimizerState,
    pub dictionary: EditVectorDictionary,
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
}

impl TrainedRun {
    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.log.iter().filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            _ => None,
        })
    }
}

/// Errors if the dataset cannot have been produced by `cfg`'s synthetic and face settings.
pub fn check_consistency(cfg: &PipelineConfig, ds: &SynthDataset, face: &BlendshapeModel) -> Result<()> {
    let (a, b) = (&cfg.synth, &ds.config);
    ensure!(
        (a.classes, a.emo_dim, a.audio_dim, a.frames) == (b.classes, b.emo_dim, b.audio_dim, b.frames),
        "dataset dimensions (K={}, d_emo={}, d_audio={}, T={}) disagree with the config (K={}, d_emo={}, d_audio={}, T={})",
        b.classes, b.emo_dim, b.audio_dim, b.frames, a.classes, a.emo_dim, a.audio_dim, a.frames
    );
    let want = cfg.face_model()?;
    ensure!(
        face.layout() == want.layout() && face.num_vertices() == want.num_vertices(),
        "dataset face model {:?} with {} vertices disagrees with the configured face {:?} with {}",
        face.layout(),
        face.num_vertices(),
        want.layout(),
        want.num_vertices()
    );
    ensure!(ds.layout == face.layout(), "dataset samples disagree with their face model");
    ensure!(!ds.split.train.is_empty(), "dataset has an empty training split");
    ensure!(!ds.split.val.is_empty(), "dataset has an empty validation split");
    Ok(())
}

pub fn split_embeddings(ds: &SynthDataset, indices: &[usize]) -> Result<LabeledEmbeddingSet> {
    let rows: Vec<Vec<f64>> = indices.iter().map(|&i| ds.samples[i].e_gt.to_vec()).collect();
    let labels = indices.iter().map(|&i| ds.samples[i].label).collect();
    Ok(LabeledEmbeddingSet::new(Matrix::from_rows(&rows)?, labels, ds.class_names.clone())?)
}

pub fn val_samples(ds: &SynthDataset) -> Vec<TrainSample> {
    ds.split.val.iter().map(|&i| ds.samples[i].to_train_sample()).collect()
}

fn round_params(model: &mut DiffusionModel) {
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for v in model.params.value_data_mut(id) {
            *v = (*v as f32) as f64;
        }
    }
}

pub fn train(cfg: &PipelineConfig, ds: &SynthDataset, face: &BlendshapeModel) -> Result<TrainedRun> {
    cfg.validate()?;
    check_consistency(cfg, ds, face)?;
    let mut log = Vec::new();
    let train_set: Vec<TrainSample> = ds.train_samples();
    let val_set = val_samples(ds);

    let embeddings = split_embeddings(ds, &ds.split.train)?;
    let clf = train_classifier(&embeddings, &cfg.classifier)?;
    let dictionary = build_dictionary(&clf, &ds.class_names)?;
    let model_cfg = cfg.model_config(face.layout());
    let schedule = model_cfg.schedule.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DiffusionModel::new(model_cfg, &mut rng)?;
    let mut opt = OptimizerState::new(&model.params);
    let ctx = TrainContext { face, schedule: &schedule, dictionary: Some(&dictionary) };
    let tcfg = cfg.train_config();

    log.push(LogRecord::Start {
        config_sha256: cfg.digest()?,
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        parameters: model.params.num_scalars(),
    });
    log.push(LogRecord::Classifier {
        iterations: clf.meta.iterations,
        final_loss: clf.meta.final_loss,
        train_accuracy: accuracy(&embeddings, &clf)?,
    });
    let initial = validation_recon(&model, &val_set, &schedule, VAL_RECON_SEED)?;
    log.push(LogRecord::Init { val_recon: initial });

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    let mut last_val = initial;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut rec = EpochRecord {
            epoch,
            steps: 0,
            lr: 0.0,
            total: 0.0,
            recon: 0.0,
            mesh: 0.0,
            normal: 0.0,
            vel: 0.0,
            acc: 0.0,
            emo: 0.0,
            edited_emo: 0.0,
            n_original: 0,
            n_edited: 0,
            val_recon: 0.0,
        };
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let lr = cosine_lr(step, total_steps, cfg.optimizer.lr);
            let r = training_step(&mut model, &mut opt, &batch, &ctx, &tcfg, lr, &mut rng)?;
            let (no, ne) = (r.n_original as f64, r.n_edited as f64);
            rec.total += r.total;
            rec.recon += r.original.recon * no;
            rec.mesh += r.original.mesh * no;
            rec.normal += r.original.normal * no;
            rec.vel += r.original.vel * no;
            rec.acc += r.original.acc * no;
            rec.emo += r.original.emo * no;
            rec.edited_emo += r.edited_emo * ne;
            rec.n_original += r.n_original;
            rec.n_edited += r.n_edited;
            rec.lr = lr;
            rec.steps += 1;
            step += 1;
        }
        rec.total /= rec.steps as f64;
        let no = rec.n_original.max(1) as f64;
        for v in [&mut rec.recon, &mut rec.mesh, &mut rec.normal, &mut rec.vel, &mut rec.acc, &mut rec.emo] {
            *v /= no;
        }
        rec.edited_emo /= rec.n_edited.max(1) as f64;
        rec.val_recon = validation_recon(&model, &val_set, &schedule, VAL_RECON_SEED)?;
        last_val = rec.val_recon;
        log::info!(
            "epoch {epoch}: loss {:.4} recon {:.4} edited emo {:.4} val recon {:.4}",
            rec.total,
            rec.recon,
            rec.edited_emo,
            rec.val_recon
        );
        log.push(LogRecord::Epoch(rec));
    }

    // stored tensors are f32; keep the in-memory model identical to what a reload yields
    round_params(&mut model);
    log.push(LogRecord::Done { steps: opt.step, initial_val_recon: initial, final_val_recon: last_val });

    let extra = serde_json::json!({
        "pipeline": cfg,
        "config_sha256": cfg.digest()?,
        "class_names": ds.class_names,
        "dictionary_sha256": dictionary.digest(),
    });
    let mut checkpoint = Checkpoint::from_model(&model, Some(&opt), &schedule, extra)?;
    checkpoint.insert(CENTROIDS_TENSOR, embeddings.class_centroids())?;
    checkpoint.insert(IDENTITIES_TENSOR, ds.world.identities.clone())?;
    Ok(TrainedRun { model, optimizer: opt, dictionary, checkpoint, log })
}
