//! The representation memory and the supervision log.
//!
//! Nearest-neighbour retrieval is an exact linear scan. Thresholds are
//! calibrated on exact distances, so no approximate index is offered.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedding, EmbeddingError, Metric, ObjectId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("memory is empty")]
    EmptyMemory,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("supervision distance must be finite and non-negative, got {0}")]
    InvalidDelta(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub representation: Embedding,
    pub label: ObjectId,
    pub sequence_id: String,
    /// Ground truth carried along for evaluation; never read by the decision rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_object: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// Append-only store of every processed sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryStore {
    entries: Vec<MemoryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbour<'a> {
    pub index: usize,
    pub entry: &'a MemoryEntry,
    pub delta: f64,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&MemoryEntry> {
        self.entries.get(index)
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.representation.dim())
    }

    /// Appends an entry. All representations must share one dimension.
    pub fn push(&mut self, entry: MemoryEntry) -> Result<(), MemoryError> {
        if let Some(dim) = self.dim() {
            if entry.representation.dim() != dim {
                return Err(
                    EmbeddingError::DimensionMismatch { expected: dim, actual: entry.representation.dim() }.into()
                );
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Exact nearest neighbour. Ties go to the earliest-inserted entry.
    pub fn nearest(&self, query: &Embedding, metric: Metric) -> Result<Neighbour<'_>, MemoryError> {
        let dim = self.dim().ok_or(MemoryError::EmptyMemory)?;
        if query.dim() != dim {
            return Err(EmbeddingError::DimensionMismatch { expected: dim, actual: query.dim() }.into());
        }
        let q = query.as_slice();
        let mut best = (0usize, f64::INFINITY);
        for (i, entry) in self.entries.iter().enumerate() {
            let d = metric.distance_unchecked(q, entry.representation.as_slice());
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(Neighbour { index: best.0, entry: &self.entries[best.0], delta: best.1 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisionRecord {
    pub delta: f64,
    pub same: bool,
}

/// The user's answers, each paired with the distance that triggered the query.
/// Kept sorted ascending by distance; equal distances keep insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SupervisionLog {
    records: Vec<SupervisionRecord>,
}

impl SupervisionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SupervisionRecord] {
        &self.records
    }

    /// Returns the index the record landed at.
    pub fn insert(&mut self, delta: f64, same: bool) -> Result<usize, MemoryError> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(MemoryError::InvalidDelta(delta));
        }
        let at = self.records.partition_point(|r| r.delta <= delta);
        self.records.insert(at, SupervisionRecord { delta, same });
        Ok(at)
    }

    /// Builds a log from unsorted pairs, as if inserted in the given order.
    pub fn from_pairs<I>(pairs: I) -> Result<Self, MemoryError>
    where
        I: IntoIterator<Item = (f64, bool)>,
    {
        let mut log = Self::new();
        for (delta, same) in pairs {
            log.insert(delta, same)?;
        }
        Ok(log)
    }

    pub fn deltas(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.delta)
    }

    pub fn answers(&self) -> impl Iterator<Item = bool> + '_ {
        self.records.iter().map(|r| r.same)
    }

    pub(crate) fn is_sorted(&self) -> bool {
        self.records.windows(2).all(|w| w[0].delta <= w[1].delta)
    }
}
