//! The online recognition loop.
//!
//! Each call to [`Session::process`] embeds one sequence, finds its nearest
//! neighbour in memory and decides between "same object as the neighbour",
//! "new object", and (in active mode) "ask the user". Every sequence ends up
//! in memory with the label that decision produced. Answers are logged with
//! their distance and drive the thresholds of the next iteration.
//!
//! When the answer source cannot respond (a human behind a UI), the session
//! parks the query in a pending state and [`Session::answer`] completes it
//! later. The whole session, pending query included, round-trips through
//! [`Session::to_json`] / [`Session::from_json`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{embed_video, Embedding, EmbeddingError, Metric, ObjectId, SequenceSample};
use crate::memory::{MemoryEntry, MemoryError, MemoryStore, SupervisionLog};
use crate::thresholds::{decision_thresholds, recognition_threshold, DecisionThresholds, EffortBudget, ThresholdError};

pub const SESSION_FORMAT: &str = "follower-session";
pub const SESSION_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FollowerError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("a query is pending ({0}); answer it before processing more sequences")]
    PendingQuery(String),
    #[error("no pending query matches {0}")]
    UnknownQuery(String),
    #[error("unsupervised mode needs a recognition threshold but the supervision log is empty")]
    NoRecognitionThreshold,
    #[error("answer source failed: {0}")]
    AnswerSource(String),
    #[error("session state: {0}")]
    State(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Active,
    /// Two-way decisions with the recognition threshold, no queries.
    Unsupervised,
}

fn default_bootstrap() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub alpha: EffortBudget,
    /// Answers to collect before thresholds are trusted.
    #[serde(default = "default_bootstrap")]
    pub bootstrap_queries: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub metric: Metric,
    /// L2-normalize sequence representations before storing them.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SessionConfig {
    pub fn active(alpha: f64) -> Result<Self, FollowerError> {
        let config = Self {
            alpha: EffortBudget::new(alpha)?,
            bootstrap_queries: default_bootstrap(),
            mode: Mode::Active,
            metric: Metric::Euclidean,
            normalize: false,
            seed: 0,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), FollowerError> {
        if self.mode == Mode::Active && self.bootstrap_queries == 0 {
            return Err(FollowerError::InvalidConfig("bootstrap_queries must be at least 1 in active mode".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAnswer {
    pub same_object: bool,
}

/// What the user is asked: is `sequence_id` the same object as `neighbour`?
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub query_id: String,
    pub iteration: u64,
    pub sequence_id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
    pub neighbour_index: usize,
    pub neighbour_sequence_id: String,
    pub candidate_label: ObjectId,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub neighbour_metadata: BTreeMap<String, String>,
    pub delta: f64,
    pub thresholds: Option<DecisionThresholds>,
    /// The query was issued regardless of thresholds (bootstrap or baseline).
    pub forced: bool,
}

/// Context handed to an [`AnswerSource`].
#[derive(Debug, Clone, Copy)]
pub struct QueryContext<'a> {
    pub query: &'a PendingQuery,
    pub sequence_true_object: Option<&'a str>,
    pub neighbour: &'a MemoryEntry,
}

/// Answers "same object?" questions. `Ok(None)` means nobody can answer now
/// and the session should suspend.
pub trait AnswerSource {
    fn ask(&mut self, ctx: &QueryContext<'_>) -> Result<Option<UserAnswer>, FollowerError>;
}

/// Answer source for live sessions: every query suspends.
#[derive(Debug, Clone, Copy, Default)]
pub struct Deferred;

impl AnswerSource for Deferred {
    fn ask(&mut self, _: &QueryContext<'_>) -> Result<Option<UserAnswer>, FollowerError> {
        Ok(None)
    }
}

/// Replays a fixed list of answers, then suspends.
#[derive(Debug, Clone, Default)]
pub struct Scripted {
    answers: std::collections::VecDeque<bool>,
}

impl Scripted {
    pub fn new<I: IntoIterator<Item = bool>>(answers: I) -> Self {
        Self { answers: answers.into_iter().collect() }
    }
}

impl AnswerSource for Scripted {
    fn ask(&mut self, _: &QueryContext<'_>) -> Result<Option<UserAnswer>, FollowerError> {
        Ok(self.answers.pop_front().map(|same_object| UserAnswer { same_object }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    RecognizedAsSeen,
    DeclaredNew,
    /// The user was asked; `answer` holds the reply.
    QueryUser,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub iteration: u64,
    pub sequence_id: String,
    pub kind: DecisionKind,
    pub label: ObjectId,
    /// Distance to the nearest neighbour; absent when memory was empty.
    pub delta: Option<f64>,
    pub neighbour_index: Option<usize>,
    pub neighbour_sequence_id: Option<String>,
    pub neighbour_label: Option<ObjectId>,
    pub thresholds: Option<DecisionThresholds>,
    pub recognition_threshold: Option<f64>,
    pub queried: bool,
    pub forced: bool,
    pub answer: Option<bool>,
    pub query_id: Option<String>,
}

impl DecisionRecord {
    /// The sequence this one was linked to as "same object", if any.
    pub fn linked_sequence(&self) -> Option<&str> {
        let linked = match self.kind {
            DecisionKind::RecognizedAsSeen => true,
            DecisionKind::QueryUser => self.answer == Some(true),
            DecisionKind::DeclaredNew => false,
        };
        if linked {
            self.neighbour_sequence_id.as_deref()
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Decided(DecisionRecord),
    Pending(PendingQuery),
}

impl Outcome {
    pub fn decided(self) -> Option<DecisionRecord> {
        match self {
            Outcome::Decided(d) => Some(d),
            Outcome::Pending(_) => None,
        }
    }
}

/// Which sequences produced each supervision record. Audit only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionAudit {
    pub query_id: String,
    pub sequence_id: String,
    pub neighbour_sequence_id: String,
    pub delta: f64,
    pub same_object: bool,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PendingState {
    query: PendingQuery,
    representation: Embedding,
    true_object: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    format: String,
    version: u32,
    config: SessionConfig,
    memory: MemoryStore,
    supervision: SupervisionLog,
    audit: Vec<SupervisionAudit>,
    next_id: u64,
    iteration: u64,
    queries_issued: u64,
    /// Recognition threshold fixed from outside (unsupervised evaluation).
    frozen_recognition: Option<f64>,
    pending: Option<PendingState>,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, FollowerError> {
        config.validate()?;
        Ok(Self {
            format: SESSION_FORMAT.to_string(),
            version: SESSION_VERSION,
            config,
            memory: MemoryStore::new(),
            supervision: SupervisionLog::new(),
            audit: Vec::new(),
            next_id: 0,
            iteration: 0,
            queries_issued: 0,
            frozen_recognition: None,
            pending: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.memory
    }

    pub fn supervision(&self) -> &SupervisionLog {
        &self.supervision
    }

    pub fn audit(&self) -> &[SupervisionAudit] {
        &self.audit
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn queries_issued(&self) -> u64 {
        self.queries_issued
    }

    pub fn issued_ids(&self) -> u64 {
        self.next_id
    }

    pub fn pending(&self) -> Option<&PendingQuery> {
        self.pending.as_ref().map(|p| &p.query)
    }

    /// Switches to query-free operation with a fixed recognition threshold.
    /// `None` recomputes the threshold from the current log.
    pub fn freeze_unsupervised(&mut self, lambda: Option<f64>) -> Result<f64, FollowerError> {
        let lambda = match lambda {
            Some(l) => l,
            None => recognition_threshold(&self.supervision).map_err(|_| FollowerError::NoRecognitionThreshold)?.lambda,
        };
        self.config.mode = Mode::Unsupervised;
        self.frozen_recognition = Some(lambda);
        Ok(lambda)
    }

    /// Whether the next query-able iteration must ask regardless of thresholds.
    pub fn bootstrap_active(&self) -> bool {
        self.config.mode == Mode::Active
            && !self.memory.is_empty()
            && self.supervision.len() < self.config.bootstrap_queries
    }

    /// Current query band, if the log supports one.
    pub fn current_thresholds(&self) -> Option<DecisionThresholds> {
        match decision_thresholds(&self.supervision, self.config.alpha) {
            Ok(t) => Some(t),
            Err(ThresholdError::EmptyWindow) => {
                // zero budget: the band collapses onto the recognition cut
                recognition_threshold(&self.supervision)
                    .ok()
                    .map(|r| DecisionThresholds { lower: r.lambda, upper: r.lambda })
            }
            Err(_) => None,
        }
    }

    pub fn current_recognition_threshold(&self) -> Option<f64> {
        self.frozen_recognition.or_else(|| recognition_threshold(&self.supervision).ok().map(|r| r.lambda))
    }

    fn new_id(&mut self) -> ObjectId {
        let id = ObjectId(self.next_id);
        self.next_id += 1;
        id
    }

    fn representation(&self, sample: &SequenceSample) -> Result<Embedding, FollowerError> {
        let r = embed_video(sample)?;
        Ok(if self.config.normalize { r.l2_normalized() } else { r })
    }

    fn store(
        &mut self,
        representation: Embedding,
        label: ObjectId,
        sequence_id: String,
        true_object: Option<String>,
        metadata: BTreeMap<String, String>,
    ) -> Result<(), FollowerError> {
        self.memory.push(MemoryEntry { representation, label, sequence_id, true_object, metadata })?;
        self.iteration += 1;
        Ok(())
    }

    /// Runs one iteration of the loop on `sample`.
    pub fn process<A: AnswerSource + ?Sized>(
        &mut self,
        sample: &SequenceSample,
        source: &mut A,
    ) -> Result<Outcome, FollowerError> {
        if let Some(p) = &self.pending {
            return Err(FollowerError::PendingQuery(p.query.query_id.clone()));
        }
        let representation = self.representation(sample)?;
        let iteration = self.iteration;

        if self.memory.is_empty() {
            let label = self.new_id();
            self.store(
                representation,
                label,
                sample.sequence_id.clone(),
                sample.true_object.clone(),
                sample.metadata.clone(),
            )?;
            return Ok(Outcome::Decided(DecisionRecord {
                iteration,
                sequence_id: sample.sequence_id.clone(),
                kind: DecisionKind::DeclaredNew,
                label,
                delta: None,
                neighbour_index: None,
                neighbour_sequence_id: None,
                neighbour_label: None,
                thresholds: None,
                recognition_threshold: None,
                queried: false,
                forced: false,
                answer: None,
                query_id: None,
            }));
        }

        let nn = self.memory.nearest(&representation, self.config.metric)?;
        let (nn_index, delta) = (nn.index, nn.delta);
        let nn_label = nn.entry.label;
        let nn_sequence = nn.entry.sequence_id.clone();
        let nn_metadata = nn.entry.metadata.clone();

        let mut record = DecisionRecord {
            iteration,
            sequence_id: sample.sequence_id.clone(),
            kind: DecisionKind::DeclaredNew,
            label: nn_label,
            delta: Some(delta),
            neighbour_index: Some(nn_index),
            neighbour_sequence_id: Some(nn_sequence.clone()),
            neighbour_label: Some(nn_label),
            thresholds: None,
            recognition_threshold: None,
            queried: false,
            forced: false,
            answer: None,
            query_id: None,
        };

        let ask = match self.config.mode {
            Mode::Unsupervised => {
                let lambda = self.current_recognition_threshold().ok_or(FollowerError::NoRecognitionThreshold)?;
                record.recognition_threshold = Some(lambda);
                record.kind = if delta < lambda { DecisionKind::RecognizedAsSeen } else { DecisionKind::DeclaredNew };
                None
            }
            Mode::Active if self.bootstrap_active() => Some(true),
            Mode::Active => {
                let t = self.current_thresholds().ok_or(ThresholdError::EmptyLog)?;
                record.thresholds = Some(t);
                if delta < t.lower {
                    record.kind = DecisionKind::RecognizedAsSeen;
                    None
                } else if delta > t.upper {
                    record.kind = DecisionKind::DeclaredNew;
                    None
                } else {
                    Some(false)
                }
            }
        };

        let Some(forced) = ask else {
            record.label = match record.kind {
                DecisionKind::RecognizedAsSeen => nn_label,
                _ => self.new_id(),
            };
            self.store(
                representation,
                record.label,
                sample.sequence_id.clone(),
                sample.true_object.clone(),
                sample.metadata.clone(),
            )?;
            return Ok(Outcome::Decided(record));
        };

        self.queries_issued += 1;
        let query = PendingQuery {
            query_id: format!("q{:06}", self.queries_issued),
            iteration,
            sequence_id: sample.sequence_id.clone(),
            metadata: sample.metadata.clone(),
            neighbour_index: nn_index,
            neighbour_sequence_id: nn_sequence,
            candidate_label: nn_label,
            neighbour_metadata: nn_metadata,
            delta,
            thresholds: record.thresholds,
            forced,
        };
        let answer = source.ask(&QueryContext {
            query: &query,
            sequence_true_object: sample.true_object.as_deref(),
            neighbour: &self.memory.entries()[nn_index],
        })?;
        self.pending =
            Some(PendingState { query: query.clone(), representation, true_object: sample.true_object.clone() });
        match answer {
            Some(a) => self.answer(&query.query_id, a).map(Outcome::Decided),
            None => Ok(Outcome::Pending(query)),
        }
    }

    /// Applies the user's answer to the pending query.
    pub fn answer(&mut self, query_id: &str, answer: UserAnswer) -> Result<DecisionRecord, FollowerError> {
        match &self.pending {
            Some(p) if p.query.query_id == query_id => {}
            _ => return Err(FollowerError::UnknownQuery(query_id.to_string())),
        }
        let PendingState { query, representation, true_object } = self.pending.take().expect("checked above");

        let label = if answer.same_object { query.candidate_label } else { self.new_id() };
        self.supervision.insert(query.delta, answer.same_object)?;
        self.audit.push(SupervisionAudit {
            query_id: query.query_id.clone(),
            sequence_id: query.sequence_id.clone(),
            neighbour_sequence_id: query.neighbour_sequence_id.clone(),
            delta: query.delta,
            same_object: answer.same_object,
            forced: query.forced,
        });
        self.store(representation, label, query.sequence_id.clone(), true_object, query.metadata.clone())?;
        Ok(DecisionRecord {
            iteration: query.iteration,
            sequence_id: query.sequence_id,
            kind: DecisionKind::QueryUser,
            label,
            delta: Some(query.delta),
            neighbour_index: Some(query.neighbour_index),
            neighbour_sequence_id: Some(query.neighbour_sequence_id),
            neighbour_label: Some(query.candidate_label),
            thresholds: query.thresholds,
            recognition_threshold: None,
            queried: true,
            forced: query.forced,
            answer: Some(answer.same_object),
            query_id: Some(query.query_id),
        })
    }

    pub fn to_json(&self) -> Result<String, FollowerError> {
        serde_json::to_string(self).map_err(|e| FollowerError::State(e.to_string()))
    }

    pub fn from_json(json: &str) -> Result<Self, FollowerError> {
        let session: Session = serde_json::from_str(json).map_err(|e| FollowerError::State(e.to_string()))?;
        if session.format != SESSION_FORMAT || session.version != SESSION_VERSION {
            return Err(FollowerError::State(format!(
                "unsupported session document {} v{}",
                session.format, session.version
            )));
        }
        session.config.validate()?;
        if !session.supervision.is_sorted() {
            return Err(FollowerError::State("supervision log is not sorted".into()));
        }
        Ok(session)
    }
}

/// The fully supervised baseline: every sequence after the first is a query.
#[derive(Debug, Clone)]
pub struct FullSupervision {
    metric: Metric,
    normalize: bool,
    memory: MemoryStore,
    supervision: SupervisionLog,
    next_id: u64,
    queries: u64,
}

impl FullSupervision {
    pub fn new(metric: Metric, normalize: bool) -> Self {
        Self {
            metric,
            normalize,
            memory: MemoryStore::new(),
            supervision: SupervisionLog::new(),
            next_id: 0,
            queries: 0,
        }
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.memory
    }

    pub fn supervision(&self) -> &SupervisionLog {
        &self.supervision
    }

    /// Processes one sequence. The source must answer; suspension is not supported.
    pub fn process<A: AnswerSource + ?Sized>(
        &mut self,
        sample: &SequenceSample,
        source: &mut A,
    ) -> Result<DecisionRecord, FollowerError> {
        let mut representation = embed_video(sample)?;
        if self.normalize {
            representation = representation.l2_normalized();
        }
        let iteration = self.memory.len() as u64;
        let entry = |representation, label| MemoryEntry {
            representation,
            label,
            sequence_id: sample.sequence_id.clone(),
            true_object: sample.true_object.clone(),
            metadata: sample.metadata.clone(),
        };

        if self.memory.is_empty() {
            let label = ObjectId(self.next_id);
            self.next_id += 1;
            self.memory.push(entry(representation, label))?;
            return Ok(DecisionRecord {
                iteration,
                sequence_id: sample.sequence_id.clone(),
                kind: DecisionKind::DeclaredNew,
                label,
                delta: None,
                neighbour_index: None,
                neighbour_sequence_id: None,
                neighbour_label: None,
                thresholds: None,
                recognition_threshold: None,
                queried: false,
                forced: false,
                answer: None,
                query_id: None,
            });
        }

        let nn = self.memory.nearest(&representation, self.metric)?;
        self.queries += 1;
        let query = PendingQuery {
            query_id: format!("q{:06}", self.queries),
            iteration,
            sequence_id: sample.sequence_id.clone(),
            metadata: sample.metadata.clone(),
            neighbour_index: nn.index,
            neighbour_sequence_id: nn.entry.sequence_id.clone(),
            candidate_label: nn.entry.label,
            neighbour_metadata: nn.entry.metadata.clone(),
            delta: nn.delta,
            thresholds: None,
            forced: true,
        };
        let answer = source
            .ask(&QueryContext {
                query: &query,
                sequence_true_object: sample.true_object.as_deref(),
                neighbour: nn.entry,
            })?
            .ok_or_else(|| FollowerError::AnswerSource("baseline requires an answer to every query".into()))?;
        let label = if answer.same_object {
            query.candidate_label
        } else {
            let id = ObjectId(self.next_id);
            self.next_id += 1;
            id
        };
        self.supervision.insert(query.delta, answer.same_object)?;
        self.memory.push(entry(representation, label))?;
        Ok(DecisionRecord {
            iteration,
            sequence_id: query.sequence_id,
            kind: DecisionKind::QueryUser,
            label,
            delta: Some(query.delta),
            neighbour_index: Some(query.neighbour_index),
            neighbour_sequence_id: Some(query.neighbour_sequence_id),
            neighbour_label: Some(query.candidate_label),
            thresholds: None,
            recognition_threshold: None,
            queried: true,
            forced: true,
            answer: Some(answer.same_object),
            query_id: Some(query.query_id),
        })
    }
}
