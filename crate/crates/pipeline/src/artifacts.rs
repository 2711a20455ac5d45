use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const ARTIFACTS_FILE: &str = "artifacts.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.eetk";
pub const DICTIONARY_FILE: &str = "dictionary.json";
pub const FACE_FILE: &str = "face.eetm";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.json";

/// A file plus the SHA-256 of its contents. Relative paths resolve against the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn of(dir: &Path, path: &str) -> Result<Self> {
        Ok(Self { path: path.to_string(), sha256: file_sha256(&dir.join(path))? })
    }

    pub fn resolve(&self, dir: &Path) -> PathBuf {
        dir.join(&self.path)
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(eet_core::sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub checkpoint: FileRef,
    pub dictionary: FileRef,
    pub face_model: FileRef,
    pub log: FileRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<FileRef>,
    pub config_sha256: String,
}

impl RunArtifacts {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(ARTIFACTS_FILE);
        let text = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_slice(&text)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(ARTIFACTS_FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Recomputes every recorded digest.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let files = [&self.checkpoint, &self.dictionary, &self.face_model, &self.log];
        for f in files.into_iter().chain(self.metrics.as_ref()) {
            let got = file_sha256(&f.resolve(dir))?;
            if got != f.sha256 {
                bail!("digest mismatch for {}: recorded {}, found {got}", f.path, f.sha256);
            }
        }
        Ok(())
    }
}

/// Fails on an existing non-empty directory unless `force`; never deletes anything.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            bail!("{} exists and is not a directory", dir.display());
        }
        let non_empty = std::fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            bail!("{} is not empty; pass --force to overwrite", dir.display());
        }
    }
    Ok(())
}
