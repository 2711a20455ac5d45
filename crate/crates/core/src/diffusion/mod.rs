//! Conditional denoising diffusion over parameter sequences.

mod checkpoint;
mod denoiser;
mod model;
mod optim;
mod sample;
mod schedule;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use denoiser::{timestep_embedding, Conditioning, Denoiser, DenoiserConfig, DenoiserTrace, OutputInit};
pub use model::{Denoise, DiffusionModel, ModelArch, ModelConfig, DENOISER_PREFIX, MAPPING_PREFIX};
pub use optim::{adamw_update, cosine_lr, AdamWConfig, OptimizerState};
pub use sample::{sample, SampleMode};
pub use schedule::{build_schedule, q_sample, NoiseSchedule, Posterior, ScheduleConfig};
pub use train::{
    draw_sample, sample_edit, seeded_predictions, training_step, validation_recon, SampleDraw, SampleOutcome,
    StepReport, TrainConfig, TrainContext, TrainSample,
};
