//! Training, evaluation, generation and serving on top of `eet-core`.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod engine;
pub mod eval;
pub mod server;
pub mod train;

pub use config::PipelineConfig;
pub use engine::{ApiError, EditSpec, Engine, ErrorCode, GenerateRequest};
