//! Dataset directory: `manifest.json`, `face.eetm` and one `samples/NNNNN.bin` per sample.
//!
//! Sample blob, little-endian:
//!
//! ```text
//! "EETS" | version u16 | T u32 | D u32 | d_audio u32 | d_emo u32 | label u32 | identity u32
//! mask u8[T] | params f32[T·D] | audio f32[T·d_audio] | e_gt f32[d_emo]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Split, SynthConfig, SynthDataset, SynthSample, SynthWorld};
use crate::binio::{sha256_hex, Reader, Writer};
use crate::error::{Error, Result};
use crate::facemodel::{BlendshapeModel, ParamLayout, ParamSequence};
use crate::losses::FrameMask;
use crate::manifold::EmotionEmbedding;
use crate::numerics::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FACE_MODEL_FILE: &str = "face.eetm";
const FORMAT: &str = "eet-synth-dataset";
const MAGIC: &[u8; 4] = b"EETS";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub index: usize,
    pub file: String,
    pub label: usize,
    pub identity: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub config: SynthConfig,
    pub layout: ParamLayout,
    pub class_names: Vec<String>,
    pub embedding_ch: f64,
    pub centroids: Vec<Vec<f64>>,
    pub templates: Vec<Vec<f64>>,
    pub readout: Vec<Vec<f64>>,
    pub identities: Vec<Vec<f64>>,
    pub split: Split,
    pub samples: Vec<SampleEntry>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn matrix(rows: &[Vec<f64>], cols: usize) -> Result<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, cols));
    }
    Matrix::from_rows(rows)
}

fn sample_bytes(s: &SynthSample) -> Result<Vec<u8>> {
    let (t, d) = s.params_gt.values().shape();
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    for v in [t, d, s.audio.cols(), s.e_gt.dim(), s.label, s.identity] {
        w.len_u32(v)?;
    }
    for i in 0..t {
        w.u8(u8::from(s.mask.is_valid(i)));
    }
    w.f32s(s.params_gt.values().data());
    w.f32s(s.audio.data());
    w.f32s(&s.e_gt);
    Ok(w.into_inner())
}

fn sample_from_bytes(bytes: &[u8]) -> Result<SynthSample> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported sample version {version}")));
    }
    let (t, d, da, de) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
    let (label, identity) = (r.usize()?, r.usize()?);
    let mask = (0..t).map(|_| r.u8().map(|b| b != 0)).collect::<Result<Vec<_>>>()?;
    let params = Matrix::new(t, d, r.f32s(t * d)?)?;
    let audio = Matrix::new(t, da, r.f32s(t * da)?)?;
    let e = r.f32s(de)?;
    if !r.is_at_end() {
        return Err(Error::Format("trailing bytes after sample".into()));
    }
    Ok(SynthSample {
        audio,
        e_gt: EmotionEmbedding::new(e)?,
        label,
        identity,
        params_gt: ParamSequence::new(params)?,
        mask: FrameMask::new(mask)?,
    })
}

pub fn save_dataset(dir: impl AsRef<Path>, ds: &SynthDataset, face: &BlendshapeModel) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("samples"))?;
    face.save(dir.join(FACE_MODEL_FILE))?;
    let mut entries = Vec::with_capacity(ds.samples.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let file = format!("samples/{i:05}.bin");
        let bytes = sample_bytes(s)?;
        std::fs::write(dir.join(&file), &bytes)?;
        entries.push(SampleEntry { index: i, file, label: s.label, identity: s.identity, sha256: sha256_hex(&bytes) });
    }
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        version: VERSION as u32,
        config: ds.config.clone(),
        layout: ds.layout,
        class_names: ds.class_names.clone(),
        embedding_ch: ds.embedding_ch,
        centroids: rows(&ds.world.centroids),
        templates: rows(&ds.world.templates),
        readout: rows(&ds.world.readout),
        identities: rows(&ds.world.identities),
        split: ds.split.clone(),
        samples: entries,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(SynthDataset, BlendshapeModel)> {
    let dir = dir.as_ref();
    let m: DatasetManifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
    if m.format != FORMAT || m.version != VERSION as u32 {
        return Err(Error::Format(format!("not a dataset manifest: {} v{}", m.format, m.version)));
    }
    let face = BlendshapeModel::load(dir.join(FACE_MODEL_FILE))?;
    if face.layout() != m.layout {
        return Err(Error::Format("face model layout differs from the manifest".into()));
    }
    let mut samples = Vec::with_capacity(m.samples.len());
    for (i, e) in m.samples.iter().enumerate() {
        let bytes = std::fs::read(dir.join(&e.file))?;
        if e.index != i || sha256_hex(&bytes) != e.sha256 {
            return Err(Error::Format(format!("sample {} is corrupt or out of order", e.file)));
        }
        let s = sample_from_bytes(&bytes)?;
        if s.label != e.label || s.identity != e.identity || s.label >= m.class_names.len() {
            return Err(Error::Format(format!("sample {} disagrees with the manifest", e.file)));
        }
        samples.push(s);
    }
    let n = samples.len();
    if m.split.train.iter().chain(&m.split.val).any(|&i| i >= n) {
        return Err(Error::Format("split refers to missing samples".into()));
    }
    let l = m.layout;
    let world = SynthWorld {
        centroids: matrix(&m.centroids, m.config.emo_dim)?,
        templates: matrix(&m.templates, l.n_exp)?,
        readout: matrix(&m.readout, m.config.audio_dim)?,
        identities: matrix(&m.identities, l.n_id)?,
    };
    let ds = SynthDataset {
        config: m.config,
        layout: l,
        class_names: m.class_names,
        world,
        samples,
        split: m.split,
        embedding_ch: m.embedding_ch,
    };
    Ok((ds, face))
}
