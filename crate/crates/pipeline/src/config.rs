use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use eet_core::diffusion::{AdamWConfig, ModelConfig, OutputInit, ScheduleConfig, TrainConfig};
use eet_core::facemodel::{make_synthetic_model, BlendshapeModel, ParamLayout, SyntheticModelConfig};
use eet_core::losses::{LossWeights, MappingInput};
use eet_core::manifold::ClassifierConfig;
use eet_core::metrics::MetricsConfig;
use eet_core::synthdata::SynthConfig;
use serde::{Deserialize, Serialize};

/// Network widths; input/output sizes follow from the face layout and the synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub d_model: usize,
    pub heads: usize,
    pub time_dim: usize,
    pub ffn_hidden: usize,
    pub mapping_hidden: usize,
    pub mapping_input: MappingInput,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { d_model: 32, heads: 2, time_dim: 16, ffn_hidden: 64, mapping_hidden: 64, mapping_input: MappingInput::Expression }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for model initialisation, batching and training draws.
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dual_train: bool,
    pub emo_loss_enabled: bool,
    pub p_original: f64,
    pub edit_alpha_max: f64,
    /// Base seed for deterministic evaluation sampling; sequence `i` uses `eval_seed + i`.
    pub eval_seed: u64,
    pub synth: SynthConfig,
    pub face: SyntheticModelConfig,
    pub model: ModelDims,
    pub schedule: ScheduleConfig,
    pub optimizer: AdamWConfig,
    pub weights: LossWeights,
    pub classifier: ClassifierConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 40,
            batch_size: 8,
            dual_train: true,
            emo_loss_enabled: true,
            p_original: 0.5,
            edit_alpha_max: 5.0,
            eval_seed: 1000,
            synth: SynthConfig::default(),
            face: SyntheticModelConfig::default(),
            model: ModelDims::default(),
            schedule: ScheduleConfig::default(),
            optimizer: AdamWConfig { lr: 3e-3, ..AdamWConfig::default() },
            weights: LossWeights::default(),
            classifier: ClassifierConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing pipeline config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        ensure!(self.epochs >= 1, "epochs must be at least 1");
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!((0.0..=1.0).contains(&self.p_original), "p_original must lie in [0, 1]");
        ensure!(
            self.edit_alpha_max.is_finite() && self.edit_alpha_max >= 0.0,
            "edit_alpha_max must be finite and nonnegative"
        );
        self.optimizer.validate()?;
        self.weights.validate()?;
        let face = self.face_model()?;
        self.model_config(face.layout()).validate()?;
        if face.subset(&self.metrics.fdd_subset).is_err() {
            bail!("metrics.fdd_subset {:?} is not a subset of the face model", self.metrics.fdd_subset);
        }
        let c = &self.classifier;
        ensure!(c.lr > 0.0 && c.l2 >= 0.0 && c.max_iters > 0, "invalid classifier settings");
        Ok(())
    }

    pub fn face_model(&self) -> Result<BlendshapeModel> {
        Ok(make_synthetic_model(&self.face)?)
    }

    pub fn model_config(&self, layout: ParamLayout) -> ModelConfig {
        let mut cfg = ModelConfig::new(layout, self.synth.audio_dim, self.synth.emo_dim);
        let d = &mut cfg.denoiser;
        d.d_model = self.model.d_model;
        d.heads = self.model.heads;
        d.time_dim = self.model.time_dim;
        d.ffn_hidden = self.model.ffn_hidden;
        d.output_init = OutputInit::Zero;
        cfg.mapping_hidden = self.model.mapping_hidden;
        cfg.mapping_input = self.model.mapping_input;
        cfg.schedule = self.schedule;
        cfg
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut weights = self.weights;
        if !self.emo_loss_enabled {
            weights.lambda_emo = 0.0;
        }
        TrainConfig {
            weights,
            dual_train: self.dual_train,
            p_original: self.p_original,
            mode_override: None,
            edit_alpha_max: self.edit_alpha_max,
            optimizer: self.optimizer,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        Ok(eet_core::sha256_hex(&serde_json::to_vec(self)?))
    }
}
