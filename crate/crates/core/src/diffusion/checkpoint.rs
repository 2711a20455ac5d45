//! Checkpoint file (`EETK`), little-endian:
//!
//! ```text
//! "EETK" | version u16 | meta JSON (u32 length + UTF-8)
//! tensor count u32, then per tensor: name (u32 length + UTF-8) | rank u8 | dims u32… | dtype u8 (0 = f32)
//! tensor data, f32, in table order
//! SHA-256 of everything above (32 bytes)
//! ```
//!
//! Model parameters keep their store names (`den.*`, `map.*`); optimizer
//! moments are `opt.m.<name>` / `opt.v.<name>`; the schedule is `schedule.beta`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{DiffusionModel, ModelConfig, DENOISER_PREFIX, MAPPING_PREFIX};
use super::optim::OptimizerState;
use super::schedule::NoiseSchedule;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamStore};

const MAGIC: &[u8; 4] = b"EETK";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer_step: Option<u64>,
    /// Free-form settings of the producing run.
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Self { meta, tensors: Vec::new() }
    }

    /// Model parameters, optional optimizer state and the schedule betas.
    pub fn from_model(
        model: &DiffusionModel,
        opt: Option<&OptimizerState>,
        schedule: &NoiseSchedule,
        extra: serde_json::Value,
    ) -> Result<Self> {
        let mut ck = Self::new(CheckpointMeta {
            model: *model.config(),
            optimizer_step: opt.map(|o| o.step),
            extra,
        });
        for p in model.params.iter() {
            ck.insert(p.name(), p.value().clone())?;
        }
        if let Some(opt) = opt {
            for (p, (m, v)) in model.params.iter().zip(opt.m.iter().zip(&opt.v)) {
                ck.insert(&format!("opt.m.{}", p.name()), m.clone())?;
                ck.insert(&format!("opt.v.{}", p.name()), v.clone())?;
            }
        }
        ck.insert("schedule.beta", Matrix::row_vector(schedule.beta()))?;
        Ok(ck)
    }

    pub fn insert(&mut self, name: &str, value: Matrix) -> Result<()> {
        if self.tensors.iter().any(|(n, _)| n == name) {
            return Err(Error::invalid(format!("duplicate tensor {name}")));
        }
        self.tensors.push((name.to_string(), value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn model(&self) -> Result<DiffusionModel> {
        let mut params = ParamStore::new();
        for (name, value) in &self.tensors {
            let is_param = [DENOISER_PREFIX, MAPPING_PREFIX]
                .iter()
                .any(|p| name.strip_prefix(p).is_some_and(|rest| rest.starts_with('.')));
            if is_param {
                params.insert(name.clone(), value.clone())?;
            }
        }
        DiffusionModel::from_params(self.meta.model, params)
    }

    pub fn optimizer(&self, params: &ParamStore) -> Result<Option<OptimizerState>> {
        let Some(step) = self.meta.optimizer_step else {
            return Ok(None);
        };
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for p in params.iter() {
            m.push(self.get(&format!("opt.m.{}", p.name()))?.clone());
            v.push(self.get(&format!("opt.v.{}", p.name()))?.clone());
        }
        Ok(Some(OptimizerState { step, m, v }))
    }

    /// Schedule rebuilt from the configuration and checked against the stored betas.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let s = self.meta.model.schedule.build()?;
        let stored = self.get("schedule.beta")?;
        let matches = stored.cols() == s.steps()
            && stored.data().iter().zip(s.beta()).all(|(a, b)| *a == (*b as f32) as f64);
        if !matches {
            return Err(Error::Format("stored schedule disagrees with its configuration".into()));
        }
        Ok(s)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.string(&serde_json::to_string(&self.meta)?)?;
        w.len_u32(self.tensors.len())?;
        for (name, m) in &self.tensors {
            w.string(name)?;
            w.u8(2);
            w.len_u32(m.rows())?;
            w.len_u32(m.cols())?;
            w.u8(DTYPE_F32);
        }
        for (_, m) in &self.tensors {
            w.f32s(m.data());
        }
        let digest = Sha256::digest(w.as_slice());
        w.bytes(&digest);
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DIGEST_LEN + MAGIC.len() {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("checkpoint digest mismatch".into()));
        }
        let mut r = Reader::new(body);
        r.expect_magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta: CheckpointMeta = serde_json::from_str(&r.string()?)?;
        let count = r.usize()?;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u8()?;
            if rank != 2 {
                return Err(Error::Format(format!("tensor {name} has unsupported rank {rank}")));
            }
            let rows = r.usize()?;
            let cols = r.usize()?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!("tensor {name} has unsupported dtype {dtype}")));
            }
            table.push((name, rows, cols));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, rows, cols) in table {
            let data = r.f32s(rows * cols)?;
            tensors.push((name, Matrix::new(rows, cols, data)?));
        }
        if !r.is_at_end() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        let mut ck = Self::new(meta);
        for (name, m) in tensors {
            ck.insert(&name, m)?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facemodel::ParamLayout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> DiffusionModel {
        let layout = ParamLayout { n_id: 2, n_exp: 3, n_pose: 1 };
        let mut cfg = ModelConfig::new(layout, 2, 4);
        cfg.denoiser.d_model = 8;
        cfg.mapping_hidden = 5;
        DiffusionModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn round_trip_with_optimizer_state() {
        let m = model();
        let s = m.config().schedule.build().unwrap();
        let mut opt = OptimizerState::new(&m.params);
        opt.step = 7;
        opt.m[0].data_mut()[0] = 0.25;
        let mut ck = Checkpoint::from_model(&m, Some(&opt), &s, serde_json::json!({"seed": 3})).unwrap();
        ck.insert("data.extra", Matrix::filled(2, 2, 1.5)).unwrap();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"EETK");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let m2 = back.model().unwrap();
        assert_eq!(m2.arch, m.arch);
        for (a, b) in m.params.iter().zip(m2.params.iter()) {
            assert_eq!(a.name(), b.name());
            assert_eq!(&a.value().round_to_f32(), b.value());
        }
        let opt2 = back.optimizer(&m2.params).unwrap().unwrap();
        assert_eq!(opt2.step, 7);
        assert_eq!(opt2.m[0].data()[0], 0.25);
        assert_eq!(back.schedule().unwrap(), s);
        assert_eq!(back.get("data.extra").unwrap(), &Matrix::filled(2, 2, 1.5));
        assert_eq!(back.meta.extra["seed"], 3);
    }

    #[test]
    fn corruption_is_detected() {
        let m = model();
        let s = m.config().schedule.build().unwrap();
        let bytes = Checkpoint::from_model(&m, None, &s, serde_json::Value::Null).unwrap().to_bytes().unwrap();
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped).unwrap_err().to_string().contains("digest"));
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert!(ck.optimizer(&ck.model().unwrap().params).unwrap().is_none());
    }
}
