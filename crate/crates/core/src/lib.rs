//! Online open-world recognition of object instances from sequences of
//! frame embeddings, with a user-supervision budget.
//!
//! A [`follower::Session`] consumes one sequence at a time, compares its
//! mean embedding with everything seen so far and either links it to the
//! nearest stored sequence, declares a new object, or asks the user. The
//! two decision thresholds are re-derived after every answer so that the
//! share of queries tracks the configured budget.

pub mod dataset;
pub mod embedding;
pub mod follower;
pub mod harness;
pub mod io;
pub mod memory;
pub mod metrics;
pub mod service;
pub mod thresholds;

pub use dataset::Dataset;
pub use embedding::{embed_video, Embedding, Metric, ObjectId, SequenceSample};
pub use follower::{
    AnswerSource, DecisionKind, DecisionRecord, FollowerError, FullSupervision, Mode, Outcome, PendingQuery, Session,
    SessionConfig, UserAnswer,
};
pub use memory::{MemoryEntry, MemoryStore, SupervisionLog, SupervisionRecord};
pub use metrics::{Clustering, DecisionTrace, TraceRecord};
pub use thresholds::{DecisionThresholds, EffortBudget};
