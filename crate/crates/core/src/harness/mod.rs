//! Experimental protocol: dataset splits, stream orderings, the simulated
//! user, synthetic data, and multi-fold experiment runs.

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::follower::FollowerError;
use crate::io::FormatError;
use crate::metrics::MetricsError;

mod experiment;
mod oracle;
mod persistence;
mod split;
mod stream;
mod synthetic;

pub use experiment::{
    post_bootstrap_query_rate, run_experiment, run_fold, write_run, AggregateCurves, DatasetSource, EvalPhase,
    ExperimentConfig, ExperimentResult, FoldResult, HoldoutPoint, PhaseSummary, Summary,
};
pub use oracle::{oracle_answer, Oracle};
pub use persistence::{run_persistence, PersistenceConfig, PersistencePoint, PersistenceResult};
pub use split::{make_split, SplitPlan};
pub use stream::{next_sequence, stream_order, StreamKind, StreamPolicy};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Portable seeded generator used everywhere in the harness (ChaCha, 8 rounds).
pub type ExperimentRng = rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th independent stream under `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

pub fn rng_from(base: u64, index: u64) -> ExperimentRng {
    use rand::SeedableRng;
    ExperimentRng::seed_from_u64(derive_seed(base, index))
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("dataset cannot be split: {0}")]
    Split(String),
    #[error("sequence {0} has no object label")]
    MissingLabel(String),
    #[error(transparent)]
    Follower(#[from] FollowerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
