//! Loaded model state and the edit/generate operations shared by the CLI and the HTTP service.

use std::fmt;
use std::path::{Path, PathBuf};

use eet_core::diffusion::{sample, Checkpoint, DiffusionModel, NoiseSchedule, SampleMode};
use eet_core::facemodel::{mesh_vertex_bytes, BlendshapeModel, MeshManifest, MeshSequence, ParamSequence};
use eet_core::manifold::{edit, Edit, EditDirection, EditRequest, EditVectorDictionary, EmotionEmbedding};
use eet_core::numerics::Matrix;
use eet_core::synthdata::{FeatureProvider, SynthAudio};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{file_sha256, DICTIONARY_FILE, FACE_FILE};
use crate::config::PipelineConfig;
use crate::train::{CENTROIDS_TENSOR, IDENTITIES_TENSOR};

pub const FPS: f64 = 30.0;
pub const MAX_FRAMES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidJson,
    InvalidRequest,
    UnknownLabel,
    BadEditIndex,
    DimensionMismatch,
    NotFound,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::InvalidJson => "invalid_json",
            ErrorCode::InvalidRequest => "invalid_request",
            ErrorCode::UnknownLabel => "unknown_label",
            ErrorCode::BadEditIndex => "bad_edit_index",
            ErrorCode::DimensionMismatch => "dimension_mismatch",
            ErrorCode::NotFound => "not_found",
            ErrorCode::Internal => "internal",
        }
    }
}

/// Request-level failure with a machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

impl std::error::Error for ApiError {}

fn internal(e: impl fmt::Display) -> ApiError {
    ApiError::new(ErrorCode::Internal, e.to_string())
}

/// One edit: `k` alone moves along the class normal `v_k`; with `to` it moves along `v_{k→to}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditSpec {
    pub k: usize,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<usize>,
}

impl EditSpec {
    /// Parses `k:alpha` or `i>j:alpha`.
    pub fn parse(text: &str) -> Result<Self, ApiError> {
        let bad = || ApiError::new(ErrorCode::InvalidRequest, format!("edit {text:?} is not of the form k:alpha or i>j:alpha"));
        let (dir, alpha) = text.split_once(':').ok_or_else(bad)?;
        let alpha: f64 = alpha.trim().parse().map_err(|_| bad())?;
        let (k, to) = match dir.split_once('>') {
            Some((i, j)) => (i.trim().parse().map_err(|_| bad())?, Some(j.trim().parse().map_err(|_| bad())?)),
            None => (dir.trim().parse().map_err(|_| bad())?, None),
        };
        Ok(Self { k, alpha, to })
    }

    pub fn direction(&self, classes: usize) -> Result<EditDirection, ApiError> {
        let check = |i: usize| {
            if i >= classes {
                Err(ApiError::new(ErrorCode::BadEditIndex, format!("edit index {i} out of range for {classes} classes")))
            } else {
                Ok(i)
            }
        };
        let k = check(self.k)?;
        match self.to {
            None => Ok(EditDirection::Class(k)),
            Some(j) if j == k => Err(ApiError::new(ErrorCode::BadEditIndex, format!("edit {k}>{j} has no direction"))),
            Some(j) => Ok(EditDirection::Pair(k, check(j)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditBody {
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub edits: Vec<EditSpec>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub edits: Vec<EditSpec>,
    pub frames: usize,
    /// Falls back to [`Engine::default_seed`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    /// Index of the synthetic identity whose shape coefficients condition the generation.
    #[serde(default)]
    pub identity: usize,
}

pub struct Generation {
    /// Edited embedding the model was conditioned on.
    pub embedding: EmotionEmbedding,
    pub params: ParamSequence,
    pub mesh: MeshSequence,
}

impl Generation {
    pub fn manifest(&self, face: &BlendshapeModel) -> MeshManifest {
        MeshManifest { frames: self.mesh.frames(), fps: FPS, vertices: self.mesh.vertices(), faces: face.faces().to_vec() }
    }

    pub fn vertex_bytes(&self) -> Vec<u8> {
        mesh_vertex_bytes(&self.mesh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    #[serde(rename = "K")]
    pub k: usize,
    pub class_names: Vec<String>,
    pub emo_dim: usize,
    pub audio_dim: usize,
    pub param_dim: usize,
    pub n_id: usize,
    pub n_exp: usize,
    pub n_pose: usize,
    pub vertices: usize,
    pub faces: usize,
    pub identities: usize,
    pub default_frames: usize,
    pub fps: f64,
    pub diffusion_steps: usize,
    pub parameters: usize,
    pub optimizer_step: Option<u64>,
    pub class_centroids: Vec<Vec<f64>>,
    pub checkpoint_sha256: Option<String>,
    pub dictionary_sha256: String,
    pub config_sha256: String,
}

pub struct Engine {
    pub config: PipelineConfig,
    pub model: DiffusionModel,
    pub schedule: NoiseSchedule,
    pub dictionary: EditVectorDictionary,
    pub face: BlendshapeModel,
    /// Per-class mean training embeddings, `K × d_emo`.
    pub centroids: Matrix,
    /// Synthetic identity coefficients, one row per identity.
    pub identities: Matrix,
    pub checkpoint: Checkpoint,
    pub checkpoint_sha256: Option<String>,
    pub default_seed: u64,
}

impl Engine {
    pub fn new(checkpoint: Checkpoint, dictionary: EditVectorDictionary, face: BlendshapeModel) -> anyhow::Result<Self> {
        let extra = &checkpoint.meta.extra;
        let config: PipelineConfig = serde_json::from_value(extra["pipeline"].clone())
            .map_err(|e| anyhow::anyhow!("checkpoint carries no usable pipeline config: {e}"))?;
        if let Some(d) = extra["dictionary_sha256"].as_str() {
            anyhow::ensure!(
                d == dictionary.digest(),
                "dictionary digest {} does not match the one the checkpoint was trained with ({d})",
                dictionary.digest()
            );
        }
        let model = checkpoint.model()?;
        let schedule = checkpoint.schedule()?;
        let layout = model.config().layout;
        anyhow::ensure!(face.layout() == layout, "face model layout differs from the checkpoint");
        anyhow::ensure!(dictionary.dim() == config.synth.emo_dim, "dictionary dimension differs from the checkpoint");
        let centroids = checkpoint.get(CENTROIDS_TENSOR)?.clone();
        let identities = checkpoint.get(IDENTITIES_TENSOR)?.clone();
        anyhow::ensure!(
            centroids.shape() == (dictionary.num_classes(), dictionary.dim()),
            "class centroids have shape {:?}",
            centroids.shape()
        );
        anyhow::ensure!(identities.rows() > 0 && identities.cols() == layout.n_id, "identity table has shape {:?}", identities.shape());
        Ok(Self { config, model, schedule, dictionary, face, centroids, identities, checkpoint, checkpoint_sha256: None, default_seed: 0 })
    }

    /// Loads a checkpoint; the dictionary and face model default to siblings of the checkpoint file.
    pub fn load(checkpoint: &Path, dictionary: Option<&Path>, face: Option<&Path>) -> anyhow::Result<Self> {
        let dir = checkpoint.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let dict_path = dictionary.map(Path::to_path_buf).unwrap_or_else(|| dir.join(DICTIONARY_FILE));
        let face_path = face.map(Path::to_path_buf).unwrap_or_else(|| dir.join(FACE_FILE));
        let ckpt = Checkpoint::load(checkpoint).map_err(|e| anyhow::anyhow!("loading checkpoint {}: {e}", checkpoint.display()))?;
        let dict = EditVectorDictionary::load(&dict_path)
            .map_err(|e| anyhow::anyhow!("loading dictionary {}: {e}", dict_path.display()))?;
        let face = BlendshapeModel::load(&face_path).map_err(|e| anyhow::anyhow!("loading face model {}: {e}", face_path.display()))?;
        let mut engine = Self::new(ckpt, dict, face)?;
        engine.checkpoint_sha256 = Some(file_sha256(checkpoint)?);
        Ok(engine)
    }

    pub fn class_names(&self) -> &[String] {
        self.dictionary.class_names()
    }

    pub fn centroid(&self, k: usize) -> EmotionEmbedding {
        EmotionEmbedding::new(self.centroids.row(k).to_vec()).expect("centroids are finite")
    }

    pub fn label_index(&self, label: &str) -> Result<usize, ApiError> {
        self.dictionary
            .class_index(label)
            .ok_or_else(|| ApiError::new(ErrorCode::UnknownLabel, format!("unknown label {label:?}; known: {:?}", self.class_names())))
    }

    pub fn embedding(&self, values: Vec<f64>) -> Result<EmotionEmbedding, ApiError> {
        if values.len() != self.dictionary.dim() {
            return Err(ApiError::new(
                ErrorCode::DimensionMismatch,
                format!("embedding has dimension {}, expected {}", values.len(), self.dictionary.dim()),
            ));
        }
        EmotionEmbedding::new(values).map_err(|e| ApiError::new(ErrorCode::InvalidRequest, e.to_string()))
    }

    pub fn apply_edits(&self, base: EmotionEmbedding, edits: &[EditSpec]) -> Result<EmotionEmbedding, ApiError> {
        let k = self.dictionary.num_classes();
        let edits = edits
            .iter()
            .map(|e| Ok(Edit { direction: e.direction(k)?, alpha: e.alpha }))
            .collect::<Result<Vec<_>, ApiError>>()?;
        edit(&EditRequest { base, edits }, &self.dictionary).map_err(|e| ApiError::new(ErrorCode::InvalidRequest, e.to_string()))
    }

    pub fn edit_body(&self, body: EditBody) -> Result<EmotionEmbedding, ApiError> {
        let base = self.embedding(body.embedding)?;
        self.apply_edits(base, &body.edits)
    }

    pub fn audio_features(&self, frames: usize, seed: u64) -> Result<Matrix, ApiError> {
        SynthAudio::from_config(&self.config.synth).audio_features(frames, seed).map_err(internal)
    }

    /// Samples a parameter sequence for an already-edited embedding.
    pub fn sample_params(
        &self,
        emotion: EmotionEmbedding,
        audio: Matrix,
        identity: usize,
        seed: u64,
        deterministic: bool,
    ) -> Result<ParamSequence, ApiError> {
        if identity >= self.identities.rows() {
            return Err(ApiError::new(
                ErrorCode::InvalidRequest,
                format!("identity {identity} out of range for {} identities", self.identities.rows()),
            ));
        }
        let frames = audio.rows();
        let cond = eet_core::diffusion::Conditioning::new(audio, emotion, self.identities.row(identity).to_vec())
            .map_err(|e| ApiError::new(ErrorCode::DimensionMismatch, e.to_string()))?;
        let mode = if deterministic { SampleMode::Deterministic } else { SampleMode::Ancestral };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&self.model, &cond, &self.schedule, &mut rng, mode, frames, self.model.config().layout.dim()).map_err(internal)
    }

    pub fn generate(&self, req: &GenerateRequest) -> Result<Generation, ApiError> {
        if req.frames == 0 || req.frames > MAX_FRAMES {
            return Err(ApiError::new(ErrorCode::InvalidRequest, format!("frames must lie in 1..={MAX_FRAMES}")));
        }
        let base = match (&req.label, &req.embedding) {
            (Some(l), None) => self.centroid(self.label_index(l)?),
            (None, Some(e)) => self.embedding(e.clone())?,
            _ => return Err(ApiError::new(ErrorCode::InvalidRequest, "give exactly one of label and embedding")),
        };
        let embedding = self.apply_edits(base, &req.edits)?;
        let seed = req.seed.unwrap_or(self.default_seed);
        let audio = self.audio_features(req.frames, seed)?;
        let params = self.sample_params(embedding.clone(), audio, req.identity, seed, req.deterministic)?;
        let mesh = self.face.decode_sequence(&params).map_err(internal)?;
        Ok(Generation { embedding, params, mesh })
    }

    pub fn info(&self) -> ModelInfo {
        let l = self.model.config().layout;
        ModelInfo {
            k: self.dictionary.num_classes(),
            class_names: self.class_names().to_vec(),
            emo_dim: self.dictionary.dim(),
            audio_dim: self.config.synth.audio_dim,
            param_dim: l.dim(),
            n_id: l.n_id,
            n_exp: l.n_exp,
            n_pose: l.n_pose,
            vertices: self.face.num_vertices(),
            faces: self.face.faces().len(),
            identities: self.identities.rows(),
            default_frames: self.config.synth.frames,
            fps: FPS,
            diffusion_steps: self.schedule.steps(),
            parameters: self.model.params.num_scalars(),
            optimizer_step: self.checkpoint.meta.optimizer_step,
            class_centroids: (0..self.centroids.rows()).map(|r| self.centroids.row(r).to_vec()).collect(),
            checkpoint_sha256: self.checkpoint_sha256.clone(),
            dictionary_sha256: self.dictionary.digest().to_string(),
            config_sha256: self.checkpoint.meta.extra["config_sha256"].as_str().unwrap_or_default().to_string(),
        }
    }
}
