//! On-disk dataset formats.
//!
//! An embedding archive is a flat matrix of `f32` rows:
//!
//! ```text
//! offset  size  field
//! 0       5     magic "FLWR1"
//! 5       4     dim    (u32, little-endian)
//! 9       8     count  (u64, little-endian, number of rows)
//! 17      1     endianness tag (1 = little-endian payload)
//! 18      4*dim*count  payload, row-major f32 little-endian
//! ```
//!
//! A manifest is a JSON array mapping sequences to row ranges of one or more
//! archives. Archive paths are resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::embedding::{Embedding, SequenceSample};

pub const MAGIC: &[u8; 5] = b"FLWR1";
pub const HEADER_LEN: usize = 18;
pub const LITTLE_ENDIAN: u8 = 1;
pub const ARCHIVE_FILE: &str = "embeddings.flwr";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported endianness tag {0}")]
    UnsupportedEndianness(u8),
    #[error("archive truncated: need {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("archive has {extra} bytes past the declared payload")]
    TrailingBytes { extra: u64 },
    #[error("archive declares zero dimensions")]
    ZeroDimension,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: u64, col: u32 },
    #[error("sequence {sequence_id}: rows {start}..{end} outside archive with {count} rows")]
    RowOutOfRange { sequence_id: String, start: u64, end: u64, count: u64 },
    #[error("sequences {first} and {second} share rows in {archive}")]
    OverlappingRows { first: String, second: String, archive: String },
    #[error("sequence {0} has zero rows")]
    EmptySequence(String),
    #[error("duplicate sequence id {0}")]
    DuplicateSequence(String),
    #[error("archive {archive} has dimension {actual}, expected {expected}")]
    DimensionMismatch { archive: String, expected: u32, actual: u32 },
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(String),
}

/// A decoded archive: `count` rows of `dim` floats.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArchive {
    pub dim: u32,
    pub rows: Vec<f32>,
}

impl EmbeddingArchive {
    pub fn count(&self) -> u64 {
        if self.dim == 0 {
            0
        } else {
            (self.rows.len() / self.dim as usize) as u64
        }
    }

    pub fn row(&self, i: u64) -> &[f32] {
        let d = self.dim as usize;
        let i = i as usize;
        &self.rows[i * d..(i + 1) * d]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.rows.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&self.count().to_le_bytes());
        out.push(LITTLE_ENDIAN);
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes and validates an archive held in memory.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < HEADER_LEN {
            if !MAGIC.starts_with(&bytes[..bytes.len().min(MAGIC.len())]) {
                return Err(FormatError::BadMagic);
            }
            return Err(FormatError::Truncated { expected: HEADER_LEN as u64, actual: bytes.len() as u64 });
        }
        if &bytes[..5] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let dim = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes"));
        let count = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes"));
        let tag = bytes[17];
        if tag != LITTLE_ENDIAN {
            return Err(FormatError::UnsupportedEndianness(tag));
        }
        if dim == 0 && count > 0 {
            return Err(FormatError::ZeroDimension);
        }
        let payload = &bytes[HEADER_LEN..];
        let expected = count.checked_mul(u64::from(dim)).and_then(|n| n.checked_mul(4)).unwrap_or(u64::MAX);
        let actual = payload.len() as u64;
        if actual < expected {
            return Err(FormatError::Truncated {
                expected: expected.saturating_add(HEADER_LEN as u64),
                actual: bytes.len() as u64,
            });
        }
        if actual > expected {
            return Err(FormatError::TrailingBytes { extra: actual - expected });
        }
        let mut rows = Vec::with_capacity(payload.len() / 4);
        for (k, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(FormatError::NonFinite { row: (k / dim as usize) as u64, col: (k % dim as usize) as u32 });
            }
            rows.push(v);
        }
        Ok(Self { dim, rows })
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sequence_id: String,
    pub object_label: Option<String>,
    pub archive_path: String,
    pub row_start: u64,
    pub row_count: u64,
    /// Free-form strings; `thumbnail` and `notes` are the conventional keys.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// Reads a manifest and every archive it references, validating all of them.
pub fn load_manifest(path: &Path) -> Result<Dataset, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut archives: HashMap<&str, EmbeddingArchive> = HashMap::new();
    for e in &entries {
        if !archives.contains_key(e.archive_path.as_str()) {
            archives.insert(&e.archive_path, EmbeddingArchive::read(&base.join(&e.archive_path))?);
        }
    }
    dataset_from_entries(&entries, &archives)
}

/// Builds a dataset from manifest entries and already-decoded archives.
pub fn dataset_from_entries(
    entries: &[ManifestEntry],
    archives: &HashMap<&str, EmbeddingArchive>,
) -> Result<Dataset, FormatError> {
    let mut dim: Option<u32> = None;
    let mut ids = HashSet::new();
    let mut ranges: HashMap<&str, Vec<(u64, u64, &str)>> = HashMap::new();
    for e in entries {
        if !ids.insert(e.sequence_id.as_str()) {
            return Err(FormatError::DuplicateSequence(e.sequence_id.clone()));
        }
        if e.row_count == 0 {
            return Err(FormatError::EmptySequence(e.sequence_id.clone()));
        }
        let archive = &archives[e.archive_path.as_str()];
        match dim {
            None => dim = Some(archive.dim),
            Some(d) if d != archive.dim => {
                return Err(FormatError::DimensionMismatch {
                    archive: e.archive_path.clone(),
                    expected: d,
                    actual: archive.dim,
                })
            }
            _ => {}
        }
        let end = e.row_start.checked_add(e.row_count);
        match end {
            Some(end) if end <= archive.count() => {
                ranges.entry(&e.archive_path).or_default().push((e.row_start, end, &e.sequence_id))
            }
            _ => {
                return Err(FormatError::RowOutOfRange {
                    sequence_id: e.sequence_id.clone(),
                    start: e.row_start,
                    end: end.unwrap_or(u64::MAX),
                    count: archive.count(),
                })
            }
        }
    }
    for (archive, list) in &mut ranges {
        list.sort();
        for w in list.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(FormatError::OverlappingRows {
                    first: w[0].2.to_string(),
                    second: w[1].2.to_string(),
                    archive: archive.to_string(),
                });
            }
        }
    }

    let sequences = entries
        .iter()
        .map(|e| {
            let archive = &archives[e.archive_path.as_str()];
            let frames = (e.row_start..e.row_start + e.row_count)
                .map(|r| Embedding::new(archive.row(r).to_vec()).expect("validated finite, non-empty"))
                .collect();
            SequenceSample {
                sequence_id: e.sequence_id.clone(),
                frames,
                true_object: e.object_label.clone(),
                metadata: e.metadata.clone(),
            }
        })
        .collect();
    let dim = dim.unwrap_or_else(|| archives.values().next().map_or(0, |a| a.dim));
    Ok(Dataset { dim: dim as usize, sequences })
}

/// Packs a dataset into one archive plus its manifest entries, frames of each
/// sequence stored contiguously in dataset order.
pub fn pack(dataset: &Dataset, archive_path: &str) -> (EmbeddingArchive, Vec<ManifestEntry>) {
    let mut rows = Vec::new();
    let mut entries = Vec::with_capacity(dataset.sequences.len());
    let mut next = 0u64;
    for s in &dataset.sequences {
        for f in &s.frames {
            rows.extend_from_slice(f.as_slice());
        }
        let n = s.frames.len() as u64;
        entries.push(ManifestEntry {
            sequence_id: s.sequence_id.clone(),
            object_label: s.true_object.clone(),
            archive_path: archive_path.to_string(),
            row_start: next,
            row_count: n,
            metadata: s.metadata.clone(),
        });
        next += n;
    }
    (EmbeddingArchive { dim: dataset.dim as u32, rows }, entries)
}

/// Writes `embeddings.flwr` and `manifest.json` into `dir`. Returns the manifest path.
pub fn write_manifest(dataset: &Dataset, dir: &Path) -> Result<PathBuf, FormatError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| FormatError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (archive, entries) = pack(dataset, ARCHIVE_FILE);
    let archive_path = dir.join(ARCHIVE_FILE);
    fs::write(&archive_path, archive.to_bytes()).map_err(io_err(&archive_path))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&entries)?;
    json.push('\n');
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

/// Reads frames from CSV rows `sequence_id,object_label,v0,...,v{d-1}`.
///
/// Rows of one sequence need not be adjacent; sequences keep the order of
/// their first row. A first row whose third field is not a number is taken
/// as a header. An empty object label means "unlabelled".
pub fn dataset_from_csv<R: Read>(reader: R) -> Result<Dataset, FormatError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut seqs: HashMap<String, SequenceSample> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| FormatError::Csv(e.to_string()))?;
        if record.len() < 3 {
            return Err(FormatError::Csv(format!("line {}: expected at least 3 fields", line + 1)));
        }
        if line == 0 && record[2].parse::<f32>().is_err() {
            continue;
        }
        let values = record
            .iter()
            .skip(2)
            .map(|v| v.parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FormatError::Csv(format!("line {}: {e}", line + 1)))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(FormatError::Csv(format!("line {}: {} values, expected {d}", line + 1, values.len())))
            }
            _ => {}
        }
        let frame = Embedding::new(values).map_err(|e| FormatError::Csv(format!("line {}: {e}", line + 1)))?;
        let id = record[0].to_string();
        let label = (!record[1].is_empty()).then(|| record[1].to_string());
        let entry = seqs.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            SequenceSample::new(id.clone(), Vec::new(), label.clone())
        });
        if entry.true_object != label {
            return Err(FormatError::Csv(format!("line {}: sequence {id} changes object label", line + 1)));
        }
        entry.frames.push(frame);
    }
    let sequences = order.into_iter().map(|id| seqs.remove(&id).expect("inserted")).collect();
    Ok(Dataset { dim: dim.unwrap_or(0), sequences })
}
