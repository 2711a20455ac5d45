use rand::Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::{Conditioning, Denoiser, DenoiserConfig, DenoiserTrace};
use super::schedule::ScheduleConfig;
use crate::error::{Error, Result};
use crate::facemodel::{ParamLayout, ParamSequence};
use crate::losses::{MappingInput, MappingNetwork, MappingTrace};
use crate::manifold::EmotionEmbedding;
use crate::numerics::{Matrix, ParamStore};

pub const DENOISER_PREFIX: &str = "den";
pub const MAPPING_PREFIX: &str = "map";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layout: ParamLayout,
    pub denoiser: DenoiserConfig,
    #[serde(default = "default_mapping_hidden")]
    pub mapping_hidden: usize,
    #[serde(default)]
    pub mapping_input: MappingInput,
    #[serde(default)]
    pub schedule: ScheduleConfig,
}

fn default_mapping_hidden() -> usize {
    64
}

impl ModelConfig {
    pub fn new(layout: ParamLayout, audio_dim: usize, emo_dim: usize) -> Self {
        Self {
            layout,
            denoiser: DenoiserConfig::new(layout.dim(), audio_dim, emo_dim, layout.n_id),
            mapping_hidden: default_mapping_hidden(),
            mapping_input: MappingInput::default(),
            schedule: ScheduleConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        if self.denoiser.param_dim != self.layout.dim() || self.denoiser.id_dim != self.layout.n_id {
            return Err(Error::invalid("denoiser dimensions disagree with the parameter layout"));
        }
        if self.mapping_hidden == 0 {
            return Err(Error::invalid("mapping hidden width must be at least 1"));
        }
        self.schedule.build().map(|_| ())
    }

    pub fn mapping_in_dim(&self) -> usize {
        match self.mapping_input {
            MappingInput::Expression => self.layout.n_exp,
            MappingInput::FullParams => self.layout.dim(),
        }
    }
}

/// Layer handles of the denoiser and mapping network; values live in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelArch {
    pub config: ModelConfig,
    pub denoiser: Denoiser,
    pub mapping: MappingNetwork,
}

impl ModelArch {
    /// Columns of a parameter sequence the mapping network reads.
    pub fn mapping_view(&self, seq: &Matrix) -> Matrix {
        match self.config.mapping_input {
            MappingInput::Expression => {
                let r = self.config.layout.exp_range();
                seq.columns(r.start, r.end)
            }
            MappingInput::FullParams => seq.clone(),
        }
    }

    /// Scatters a gradient on [`Self::mapping_view`] back into full parameter columns.
    pub(crate) fn mapping_view_backward(&self, d_view: &Matrix, d_seq: &mut Matrix) -> Result<()> {
        let start = match self.config.mapping_input {
            MappingInput::Expression => self.config.layout.exp_range().start,
            MappingInput::FullParams => 0,
        };
        let mut block = d_seq.columns(start, start + d_view.cols());
        block.add_assign(d_view)?;
        d_seq.set_columns(start, &block)
    }

    pub fn denoise(&self, store: &ParamStore, x_t: &Matrix, t: usize, c: &Conditioning) -> Result<DenoiserTrace> {
        self.denoiser.forward(store, x_t, t, c)
    }

    pub fn map_emotion(&self, store: &ParamStore, seq: &Matrix) -> Result<MappingTrace> {
        self.mapping.forward(store, &self.mapping_view(seq))
    }
}

/// Denoiser plus mapping network with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub arch: ModelArch,
    pub params: ParamStore,
}

impl DiffusionModel {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let denoiser = Denoiser::register(&mut params, DENOISER_PREFIX, config.denoiser, rng)?;
        let mapping = MappingNetwork::register(
            &mut params,
            MAPPING_PREFIX,
            config.mapping_in_dim(),
            config.mapping_hidden,
            config.denoiser.emo_dim,
            rng,
        )?;
        Ok(Self { arch: ModelArch { config, denoiser, mapping }, params })
    }

    /// Binds a configuration to existing parameters, e.g. loaded from a checkpoint.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let denoiser = Denoiser::lookup(&params, DENOISER_PREFIX, config.denoiser)?;
        let mapping = MappingNetwork::lookup(&params, MAPPING_PREFIX)?;
        if mapping.in_dim(&params) != config.mapping_in_dim()
            || mapping.out_dim(&params) != config.denoiser.emo_dim
            || params.value(mapping.fc1.weight).rows() != config.mapping_hidden
        {
            return Err(Error::shape("mapping network shape disagrees with the configuration"));
        }
        Ok(Self { arch: ModelArch { config, denoiser, mapping }, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    /// Utterance-level emotion embedding of a parameter sequence.
    pub fn embed(&self, seq: &ParamSequence) -> Result<EmotionEmbedding> {
        Ok(self.arch.map_emotion(&self.params, seq.values())?.output)
    }
}

/// Anything that predicts `x₀` from `(x_t, t, conditioning)`.
pub trait Denoise {
    fn predict_x0(&self, x_t: &Matrix, t: usize, c: &Conditioning) -> Result<Matrix>;
}

impl Denoise for DiffusionModel {
    fn predict_x0(&self, x_t: &Matrix, t: usize, c: &Conditioning) -> Result<Matrix> {
        Ok(self.arch.denoise(&self.params, x_t, t, c)?.output)
    }
}
