use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embedding::SequenceSample;

/// A collection of sequences sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub sequences: Vec<SequenceSample>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("sequence {0} has no frames")]
    EmptySequence(String),
    #[error("sequence {sequence_id}: frame dimension {actual}, dataset dimension {expected}")]
    Dimension { sequence_id: String, expected: usize, actual: usize },
    #[error("duplicate sequence id {0}")]
    DuplicateSequence(String),
}

impl Dataset {
    pub fn new(dim: usize, sequences: Vec<SequenceSample>) -> Result<Self, DatasetError> {
        let ds = Self { dim, sequences };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut ids = HashSet::new();
        for s in &self.sequences {
            if !ids.insert(s.sequence_id.as_str()) {
                return Err(DatasetError::DuplicateSequence(s.sequence_id.clone()));
            }
            if s.frames.is_empty() {
                return Err(DatasetError::EmptySequence(s.sequence_id.clone()));
            }
            if let Some(f) = s.frames.iter().find(|f| f.dim() != self.dim) {
                return Err(DatasetError::Dimension {
                    sequence_id: s.sequence_id.clone(),
                    expected: self.dim,
                    actual: f.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sequence indices grouped by ground-truth object, in first-seen order
    /// of the object labels' sort order. Unlabelled sequences are skipped.
    pub fn by_object(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.sequences.iter().enumerate() {
            if let Some(o) = s.true_object.as_deref() {
                out.entry(o).or_default().push(i);
            }
        }
        out
    }

    pub fn objects(&self) -> Vec<&str> {
        self.by_object().into_keys().collect()
    }

    pub fn sequences_per_object(&self) -> BTreeMap<&str, usize> {
        self.by_object().into_iter().map(|(k, v)| (k, v.len())).collect()
    }

    pub fn get(&self, sequence_id: &str) -> Option<&SequenceSample> {
        self.sequences.iter().find(|s| s.sequence_id == sequence_id)
    }
}
