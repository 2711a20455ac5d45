//! Model file (`EETM`) and mesh-sequence export.
//!
//! Model file layout, little-endian:
//!
//! ```text
//! "EETM" | version u16 | V u32 | F u32 | n_id u32 | n_exp u32 | n_pose u32
//! subset count u32, then per subset: name (u32 length + UTF-8), count u32, indices u32…
//! template f32[V·3] | faces u32[F·3] | B_shape f32[3V·n_id] | B_exp f32[3V·n_exp] | B_pose f32[3V·n_pose]
//! ```
//!
//! Bases are stored row-major.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BlendshapeModel, MeshSequence};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"EETM";
const VERSION: u16 = 1;

impl BlendshapeModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layout = self.layout();
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.len_u32(self.num_vertices())?;
        w.len_u32(self.faces().len())?;
        w.len_u32(layout.n_id)?;
        w.len_u32(layout.n_exp)?;
        w.len_u32(layout.n_pose)?;
        w.len_u32(self.subsets().len())?;
        for (name, idx) in self.subsets() {
            w.string(name)?;
            w.len_u32(idx.len())?;
            for &i in idx {
                w.u32(i);
            }
        }
        w.f32s(self.template().data());
        for &i in self.faces().iter().flatten() {
            w.u32(i);
        }
        w.f32s(self.basis_id().data());
        w.f32s(self.basis_exp().data());
        w.f32s(self.basis_pose().data());
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let v = r.usize()?;
        let f = r.usize()?;
        let n_id = r.usize()?;
        let n_exp = r.usize()?;
        let n_pose = r.usize()?;
        let n_subsets = r.usize()?;
        let mut subsets = BTreeMap::new();
        for _ in 0..n_subsets {
            let name = r.string()?;
            let count = r.usize()?;
            let idx = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            subsets.insert(name, idx);
        }
        let template = Matrix::new(v, 3, r.f32s(v * 3)?)?;
        let mut faces = Vec::with_capacity(f);
        for _ in 0..f {
            faces.push([r.u32()?, r.u32()?, r.u32()?]);
        }
        let basis_id = Matrix::new(3 * v, n_id, r.f32s(3 * v * n_id)?)?;
        let basis_exp = Matrix::new(3 * v, n_exp, r.f32s(3 * v * n_exp)?)?;
        let basis_pose = Matrix::new(3 * v, n_pose, r.f32s(3 * v * n_pose)?)?;
        if !r.is_at_end() {
            return Err(Error::Format("trailing bytes after model data".into()));
        }
        BlendshapeModel::new(template, faces, basis_id, basis_exp, basis_pose, subsets)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// JSON manifest accompanying an exported vertex buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshManifest {
    pub frames: usize,
    pub fps: f64,
    pub vertices: usize,
    pub faces: Vec<[u32; 3]>,
}

/// `T × V × 3` positions as little-endian `f32`.
pub fn mesh_vertex_bytes(seq: &MeshSequence) -> Vec<u8> {
    let mut w = Writer::new();
    w.f32s(seq.positions().data());
    w.into_inner()
}

impl MeshSequence {
    /// Writes `<stem>.json` (manifest) and `<stem>.bin` (vertex buffer).
    pub fn export(
        &self,
        faces: &[[u32; 3]],
        fps: f64,
        dir: impl AsRef<Path>,
        stem: &str,
    ) -> Result<MeshManifest> {
        let manifest = MeshManifest {
            frames: self.frames(),
            fps,
            vertices: self.vertices(),
            faces: faces.to_vec(),
        };
        let dir = dir.as_ref();
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&manifest)?)?;
        std::fs::write(dir.join(format!("{stem}.bin")), mesh_vertex_bytes(self))?;
        Ok(manifest)
    }

    /// Decodes a vertex buffer written by [`mesh_vertex_bytes`].
    pub fn from_vertex_bytes(bytes: &[u8], frames: usize, vertices: usize) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let data = r.f32s(frames * vertices * 3)?;
        if !r.is_at_end() {
            return Err(Error::Format("vertex buffer length does not match manifest".into()));
        }
        Self::new(Matrix::new(frames, vertices * 3, data)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facemodel::{make_synthetic_model, SyntheticModelConfig};

    #[test]
    fn model_file_round_trips_exactly() {
        let m = make_synthetic_model(&SyntheticModelConfig { grid: 5, ..Default::default() }).unwrap();
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"EETM");
        let back = BlendshapeModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert!(BlendshapeModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(BlendshapeModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn vertex_buffer_round_trips() {
        let seq = MeshSequence::new(Matrix::from_fn(3, 6, |t, i| (t * 6 + i) as f64 * 0.5)).unwrap();
        let bytes = mesh_vertex_bytes(&seq);
        assert_eq!(bytes.len(), 3 * 2 * 3 * 4);
        assert_eq!(MeshSequence::from_vertex_bytes(&bytes, 3, 2).unwrap(), seq);
        assert!(MeshSequence::from_vertex_bytes(&bytes, 3, 3).is_err());
    }
}
