//! Embedding vectors, sequence samples and the distance function.
//!
//! Frame and sequence representations are stored as `f32`; every
//! reduction (mean, dot product, squared norm) accumulates in `f64`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding must have at least one dimension")]
    ZeroDimension,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
}

/// A fixed-dimension feature vector for one frame or one aggregated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Builds an embedding, rejecting empty or non-finite vectors.
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDimension);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Returns the L2-normalized copy. The zero vector is returned unchanged.
    pub fn l2_normalized(&self) -> Embedding {
        let norm = self.norm();
        if norm == 0.0 {
            return self.clone();
        }
        Embedding(self.0.iter().map(|&v| (f64::from(v) / norm) as f32).collect())
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Embedding::new(values)
    }
}

/// Identity issued by a session when it decides it is looking at a new object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u64);

impl std::fmt::Display for ObjectId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One observed sequence (a short video) as a list of frame embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub sequence_id: String,
    pub frames: Vec<Embedding>,
    /// Ground-truth object label. Only the oracle and the metrics may read it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_object: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl SequenceSample {
    pub fn new(sequence_id: impl Into<String>, frames: Vec<Embedding>, true_object: Option<String>) -> Self {
        Self { sequence_id: sequence_id.into(), frames, true_object, metadata: BTreeMap::new() }
    }

    pub fn dim(&self) -> Option<usize> {
        self.frames.first().map(Embedding::dim)
    }
}

/// Component-wise arithmetic mean of the frame embeddings.
pub fn embed_video(sample: &SequenceSample) -> Result<Embedding, EmbeddingError> {
    mean_of(&sample.frames)
}

pub fn mean_of(frames: &[Embedding]) -> Result<Embedding, EmbeddingError> {
    let first = frames.first().ok_or(EmbeddingError::EmptySequence)?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for frame in frames {
        if frame.dim() != dim {
            return Err(EmbeddingError::DimensionMismatch { expected: dim, actual: frame.dim() });
        }
        for (a, &v) in acc.iter_mut().zip(frame.as_slice()) {
            *a += f64::from(v);
        }
    }
    let n = frames.len() as f64;
    Ok(Embedding(acc.into_iter().map(|a| (a / n) as f32).collect()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`, in `[0, 2]`. A zero vector is at distance 1 from everything else.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
        if a.dim() != b.dim() {
            return Err(EmbeddingError::DimensionMismatch { expected: a.dim(), actual: b.dim() });
        }
        Ok(self.distance_unchecked(a.as_slice(), b.as_slice()))
    }

    /// Distance between equal-length slices. Callers guarantee the lengths match.
    pub(crate) fn distance_unchecked(self, a: &[f32], b: &[f32]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = f64::from(x) - f64::from(y);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let (mut dot, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
                for (&x, &y) in a.iter().zip(b) {
                    let (x, y) = (f64::from(x), f64::from(y));
                    dot += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                if aa == 0.0 && bb == 0.0 {
                    return 0.0;
                }
                if aa == 0.0 || bb == 0.0 {
                    return 1.0;
                }
                // sqrt(aa * aa) == aa exactly, so d(a, a) is exactly zero
                (1.0 - dot / (aa * bb).sqrt()).clamp(0.0, 2.0)
            }
        }
    }
}

/// Euclidean distance, the default metric.
pub fn distance(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    Metric::Euclidean.distance(a, b)
}
