//! Continuous emotion editing for speech-driven 3D facial animation.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, activations and a finite-difference gradient checker.
//! - [`manifold`]: boundary-normal edit directions learned from labelled emotion embeddings.
//! - [`facemodel`]: a linear blendshape face model and vertex normals.
//! - [`losses`]: parameter, geometric, temporal and emotion-consistency objectives.
//! - [`diffusion`]: the conditional x0-predicting denoiser, its trainer and samplers.
//! - [`metrics`]: VE, LVE, MOD, FDD and the Calinski-Harabasz based ΔCH.
//! - [`synthdata`]: the deterministic synthetic dataset used for training and evaluation.

pub mod diffusion;
pub mod error;
pub mod facemodel;
pub mod losses;
pub mod manifold;
pub mod metrics;
pub mod numerics;
pub mod synthdata;

mod binio;

pub use binio::sha256_hex;
pub use error::{Error, Result};
