//! Emotion-embedding manifold: boundary-normal edit directions.
//!
//! A multinomial logistic classifier is fit to labelled embeddings. Its weight
//! rows are the decision-boundary normals; normalised, they become the editing
//! directions stored in an [`EditVectorDictionary`]. Edits are plain vector
//! additions `e + Σ α·v`.

mod classifier;
mod dictionary;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use classifier::{
    accuracy, classify, train_classifier, Classification, ClassifierConfig, LinearClassifier, TrainingMeta,
};
pub use dictionary::{
    build_dictionary, edit, scan_crossover, CrossoverScan, Edit, EditDirection, EditRequest,
    EditVectorDictionary,
};

/// A d-dimensional affective-state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionEmbedding(Vec<f64>);

impl EmotionEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("emotion embedding".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for EmotionEmbedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Embeddings `N × d` with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddingSet {
    embeddings: Matrix,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl LabeledEmbeddingSet {
    pub fn new(embeddings: Matrix, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if k < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if embeddings.cols() < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        if labels.len() != embeddings.rows() {
            return Err(Error::shape(format!(
                "{} labels for {} embeddings",
                labels.len(),
                embeddings.rows()
            )));
        }
        if !embeddings.is_finite() {
            return Err(Error::NonFinite("embeddings".into()));
        }
        let mut seen = vec![false; k];
        for &y in &labels {
            *seen
                .get_mut(y)
                .ok_or_else(|| Error::invalid(format!("label {y} out of range for {k} classes")))? =
                true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("class {missing} has no samples")));
        }
        Ok(Self { embeddings, labels, class_names })
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-class mean embedding, `K × d`.
    pub fn class_centroids(&self) -> Matrix {
        let (k, d) = (self.num_classes(), self.dim());
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &y) in self.labels.iter().enumerate() {
            counts[y] += 1;
            for (s, v) in sums.row_mut(y).iter_mut().zip(self.embeddings.row(i)) {
                *s += v;
            }
        }
        for (c, &n) in counts.iter().enumerate() {
            for s in sums.row_mut(c) {
                *s /= n as f64;
            }
        }
        sums
    }
}
