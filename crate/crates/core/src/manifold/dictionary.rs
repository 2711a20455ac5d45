use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{classify, EmotionEmbedding, LinearClassifier, TrainingMeta};
use crate::binio::sha256_hex;
use crate::error::{Error, Result};
use crate::numerics::{norm, Matrix};

const NORMAL_FLOOR: f64 = 1e-12;
const FORMAT: &str = "eet-dict";
const VERSION: u32 = 1;

/// Unit boundary normals used as continuous editing directions.
#[derive(Debug, Clone, PartialEq)]
pub struct EditVectorDictionary {
    classifier: LinearClassifier,
    class_names: Vec<String>,
    class_directions: Matrix,
    pairwise: BTreeMap<(usize, usize), Vec<f64>>,
    w_norms: Vec<f64>,
    digest: String,
    warnings: Vec<String>,
}

/// Editing direction: a per-class normal `v_k` or a pairwise normal `v_{i→j}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditDirection {
    Class(usize),
    Pair(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub direction: EditDirection,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub base: EmotionEmbedding,
    pub edits: Vec<Edit>,
}

/// Canonical byte form hashed into the classifier digest:
/// `K: u32`, `d: u32`, then `W` row-major and `b`, all `f64` little-endian.
fn classifier_digest(clf: &LinearClassifier) -> String {
    let mut bytes = Vec::with_capacity(8 + 8 * (clf.weights.len() + clf.bias.len()));
    bytes.extend_from_slice(&(clf.num_classes() as u32).to_le_bytes());
    bytes.extend_from_slice(&(clf.dim() as u32).to_le_bytes());
    for v in clf.weights.data().iter().chain(&clf.bias) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    sha256_hex(&bytes)
}

pub fn build_dictionary(
    clf: &LinearClassifier,
    class_names: &[String],
) -> Result<EditVectorDictionary> {
    let (k, d) = clf.weights.shape();
    if class_names.len() != k {
        return Err(Error::shape(format!("{} class names for {k} classes", class_names.len())));
    }
    let mut class_directions = Matrix::zeros(k, d);
    let mut w_norms = Vec::with_capacity(k);
    for c in 0..k {
        let row = clf.weights.row(c);
        let n = norm(row);
        if !(n > NORMAL_FLOOR) {
            return Err(Error::Degenerate(format!("degenerate boundary normal for class {c}")));
        }
        for (o, v) in class_directions.row_mut(c).iter_mut().zip(row) {
            *o = v / n;
        }
        w_norms.push(n);
    }

    let mut pairwise = BTreeMap::new();
    let mut warnings = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            let diff: Vec<f64> =
                clf.weights.row(j).iter().zip(clf.weights.row(i)).map(|(a, b)| a - b).collect();
            let n = norm(&diff);
            if !(n > NORMAL_FLOOR) {
                let msg = format!("classes {i} and {j} share a boundary normal; pair omitted");
                log::warn!("{msg}");
                warnings.push(msg);
                continue;
            }
            let forward: Vec<f64> = diff.iter().map(|v| v / n).collect();
            let backward: Vec<f64> = forward.iter().map(|v| -v).collect();
            pairwise.insert((i, j), forward);
            pairwise.insert((j, i), backward);
        }
    }

    Ok(EditVectorDictionary {
        digest: classifier_digest(clf),
        classifier: clf.clone(),
        class_names: class_names.to_vec(),
        class_directions,
        pairwise,
        w_norms,
        warnings,
    })
}

impl EditVectorDictionary {
    pub fn num_classes(&self) -> usize {
        self.class_directions.rows()
    }

    pub fn dim(&self) -> usize {
        self.class_directions.cols()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn classifier(&self) -> &LinearClassifier {
        &self.classifier
    }

    pub fn class_directions(&self) -> &Matrix {
        &self.class_directions
    }

    pub fn w_norms(&self) -> &[f64] {
        &self.w_norms
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn pairwise(&self) -> impl Iterator<Item = ((usize, usize), &[f64])> {
        self.pairwise.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn direction(&self, dir: EditDirection) -> Result<&[f64]> {
        let k = self.num_classes();
        match dir {
            EditDirection::Class(c) if c < k => Ok(self.class_directions.row(c)),
            EditDirection::Class(c) => {
                Err(Error::invalid(format!("class direction {c} out of range for {k} classes")))
            }
            EditDirection::Pair(i, j) => self
                .pairwise
                .get(&(i, j))
                .map(Vec::as_slice)
                .ok_or_else(|| Error::invalid(format!("no pairwise direction {i}->{j}"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DictionaryFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DictionaryFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `e_orig + Σ α·v(direction)`. Zero-α edits are skipped so the identity is exact.
pub fn edit(req: &EditRequest, dict: &EditVectorDictionary) -> Result<EmotionEmbedding> {
    if req.base.dim() != dict.dim() {
        return Err(Error::shape(format!(
            "embedding has dimension {}, dictionary expects {}",
            req.base.dim(),
            dict.dim()
        )));
    }
    let mut out = req.base.as_slice().to_vec();
    for e in &req.edits {
        if !e.alpha.is_finite() {
            return Err(Error::NonFinite("edit alpha".into()));
        }
        let v = dict.direction(e.direction)?;
        if e.alpha == 0.0 {
            continue;
        }
        for (o, vi) in out.iter_mut().zip(v) {
            *o += e.alpha * vi;
        }
    }
    EmotionEmbedding::new(out)
}

/// Result of scanning `α` along a direction from a start point.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverScan {
    /// Smallest scanned α from which argmax stays at the target class.
    pub alpha_star: Option<f64>,
    /// Whether argmax went back to the source class after first reaching the target.
    pub returned_to_source: bool,
    pub argmax_trace: Vec<usize>,
}

/// Scans `α` over `alphas` along `v_{source→target}` from `start`.
pub fn scan_crossover(
    dict: &EditVectorDictionary,
    start: &[f64],
    source: usize,
    target: usize,
    alphas: &[f64],
) -> Result<CrossoverScan> {
    let v = dict.direction(EditDirection::Pair(source, target))?;
    let mut trace = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let e: Vec<f64> = start.iter().zip(v).map(|(s, vi)| s + a * vi).collect();
        trace.push(classify(&e, dict.classifier())?.argmax);
    }
    let first_target = trace.iter().position(|&c| c == target);
    let returned_to_source =
        first_target.is_some_and(|f| trace[f..].contains(&source));
    // last index at which argmax was not the target; crossover is just after it
    let alpha_star = match trace.iter().rposition(|&c| c != target) {
        None => alphas.first().copied(),
        Some(last) if last + 1 < alphas.len() => Some(alphas[last + 1]),
        Some(_) => None,
    };
    Ok(CrossoverScan { alpha_star, returned_to_source, argmax_trace: trace })
}

#[derive(Serialize, Deserialize)]
struct PairEntry {
    i: usize,
    j: usize,
    v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DictionaryFile {
    format: String,
    version: u32,
    d: usize,
    #[serde(rename = "K")]
    k: usize,
    class_names: Vec<String>,
    #[serde(rename = "W")]
    w: Vec<f64>,
    b: Vec<f64>,
    class_directions: Vec<f64>,
    pairwise_directions: Vec<PairEntry>,
    w_norms: Vec<f64>,
    classifier_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training_meta: Option<TrainingMeta>,
}

impl From<&EditVectorDictionary> for DictionaryFile {
    fn from(d: &EditVectorDictionary) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            d: d.dim(),
            k: d.num_classes(),
            class_names: d.class_names.clone(),
            w: d.classifier.weights.data().to_vec(),
            b: d.classifier.bias.clone(),
            class_directions: d.class_directions.data().to_vec(),
            pairwise_directions: d
                .pairwise
                .iter()
                .map(|(&(i, j), v)| PairEntry { i, j, v: v.clone() })
                .collect(),
            w_norms: d.w_norms.clone(),
            classifier_digest: d.digest.clone(),
            training_meta: Some(d.classifier.meta),
        }
    }
}

impl TryFrom<DictionaryFile> for EditVectorDictionary {
    type Error = Error;

    fn try_from(f: DictionaryFile) -> Result<Self> {
        if f.format != FORMAT || f.version != VERSION {
            return Err(Error::Format(format!("unsupported dictionary {} v{}", f.format, f.version)));
        }
        let meta = f.training_meta.unwrap_or(TrainingMeta {
            iterations: 0,
            final_loss: f64::NAN,
            l2: 0.0,
            seed: 0,
        });
        let clf = LinearClassifier { weights: Matrix::new(f.k, f.d, f.w)?, bias: f.b, meta };
        if clf.bias.len() != f.k {
            return Err(Error::Format("bias length".into()));
        }
        let digest = classifier_digest(&clf);
        if digest != f.classifier_digest {
            return Err(Error::Format("classifier digest mismatch".into()));
        }
        let class_directions = Matrix::new(f.k, f.d, f.class_directions)?;
        for c in 0..f.k {
            let n = norm(class_directions.row(c));
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Format(format!("class direction {c} has norm {n}")));
            }
        }
        if f.w_norms.len() != f.k || f.w_norms.iter().any(|&n| !(n > 0.0)) {
            return Err(Error::Format("w_norms must be K positive values".into()));
        }
        if f.class_names.len() != f.k {
            return Err(Error::Format("class_names length".into()));
        }
        let mut pairwise = BTreeMap::new();
        for p in f.pairwise_directions {
            if p.i >= f.k || p.j >= f.k || p.i == p.j || p.v.len() != f.d {
                return Err(Error::Format(format!("bad pairwise entry {}->{}", p.i, p.j)));
            }
            pairwise.insert((p.i, p.j), p.v);
        }
        for (&(i, j), v) in &pairwise {
            let back = pairwise
                .get(&(j, i))
                .ok_or_else(|| Error::Format(format!("pair {i}->{j} lacks its reverse")))?;
            if v.iter().zip(back).any(|(a, b)| (a + b).abs() > 1e-12) {
                return Err(Error::Format(format!("pair {i}->{j} is not antisymmetric")));
            }
        }
        Ok(Self {
            classifier: clf,
            class_names: f.class_names,
            class_directions,
            pairwise,
            w_norms: f.w_norms,
            digest,
            warnings: Vec::new(),
        })
    }
}
