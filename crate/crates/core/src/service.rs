//! Live sessions driven step by step by a client, with a human answering
//! queries. Transport-independent; the HTTP layer lives in the CLI crate.
//!
//! Each session is persisted as one JSON document in the data directory
//! after every mutation, and reloaded (with its manifest) on restart.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::embedding::Metric;
use crate::follower::{
    DecisionRecord, Deferred, FollowerError, Mode, Outcome, PendingQuery, Session, SessionConfig, UserAnswer,
};
use crate::harness::{rng_from, stream_order, StreamKind, StreamPolicy};
use crate::io::load_manifest;
use crate::thresholds::{DecisionThresholds, EffortBudget};

pub const SERVICE_FORMAT: &str = "follower-service-session";
pub const SERVICE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("session {0} not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    /// Stable machine-readable reason.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Invalid(_) => "invalid_request",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Internal(_) => "internal",
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Invalid(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

fn default_bootstrap() -> usize {
    10
}

fn default_policy() -> StreamPolicy {
    StreamPolicy::random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub manifest: PathBuf,
    pub alpha: f64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_queries: usize,
    #[serde(default = "default_policy")]
    pub policy: StreamPolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub normalize: bool,
}

impl CreateSession {
    pub fn session_config(&self) -> Result<SessionConfig, ServiceError> {
        let config = SessionConfig {
            alpha: EffortBudget::new(self.alpha).map_err(invalid)?,
            bootstrap_queries: self.bootstrap_queries,
            mode: Mode::Active,
            metric: self.metric,
            normalize: self.normalize,
            seed: self.seed,
        };
        config.validate().map_err(invalid)?;
        self.policy.validate().map_err(invalid)?;
        Ok(config)
    }
}

/// Stream order a live session follows. Random streams accept unlabelled
/// sequences; devel streams need object labels.
pub fn session_stream(dataset: &Dataset, policy: &StreamPolicy, seed: u64) -> Result<Vec<usize>, ServiceError> {
    let items: Vec<(usize, &str)> = dataset
        .sequences
        .iter()
        .enumerate()
        .map(|(i, s)| match (&s.true_object, policy.kind) {
            (Some(o), _) => Ok((i, o.as_str())),
            (None, StreamKind::Random) => Ok((i, s.sequence_id.as_str())),
            (None, StreamKind::Devel) => {
                Err(invalid(format!("devel ordering needs object labels, {} has none", s.sequence_id)))
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(stream_order(policy, &items, &mut rng_from(seed, 0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StepResponse {
    Decided { decision: DecisionRecord },
    Pending { query: PendingQuery },
    EndOfStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub memory_size: usize,
    pub supervision_size: usize,
    pub thresholds: Option<DecisionThresholds>,
    pub recognition_threshold: Option<f64>,
    pub iterations: u64,
    pub queries: u64,
    /// Queries over iterations that had a neighbour to compare with.
    pub query_rate: f64,
    pub distinct_labels: usize,
    pub stream_position: usize,
    pub stream_length: usize,
    pub finished: bool,
    pub pending: Option<PendingQuery>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    id: String,
    request: CreateSession,
    order: Vec<usize>,
    cursor: usize,
    session: Session,
    trace: Vec<DecisionRecord>,
}

pub struct LiveSession {
    doc: Document,
    dataset: Arc<Dataset>,
}

impl LiveSession {
    fn new(id: String, request: CreateSession, dataset: Arc<Dataset>) -> Result<Self, ServiceError> {
        let config = request.session_config()?;
        let order = session_stream(&dataset, &request.policy, request.seed)?;
        let session = Session::new(config).map_err(invalid)?;
        Ok(Self {
            doc: Document {
                format: SERVICE_FORMAT.to_string(),
                version: SERVICE_VERSION,
                id,
                request,
                order,
                cursor: 0,
                session,
                trace: Vec::new(),
            },
            dataset,
        })
    }

    pub fn id(&self) -> &str {
        &self.doc.id
    }

    pub fn session(&self) -> &Session {
        &self.doc.session
    }

    pub fn trace(&self) -> &[DecisionRecord] {
        &self.doc.trace
    }

    pub fn step(&mut self) -> Result<StepResponse, ServiceError> {
        if let Some(p) = self.doc.session.pending() {
            return Err(ServiceError::Conflict(format!("query {} is unanswered", p.query_id)));
        }
        let Some(&index) = self.doc.order.get(self.doc.cursor) else {
            return Ok(StepResponse::EndOfStream);
        };
        let outcome = self.doc.session.process(&self.dataset.sequences[index], &mut Deferred).map_err(internal)?;
        self.doc.cursor += 1;
        Ok(match outcome {
            Outcome::Decided(decision) => {
                self.doc.trace.push(decision.clone());
                StepResponse::Decided { decision }
            }
            Outcome::Pending(query) => StepResponse::Pending { query },
        })
    }

    /// Exactly-once: repeating the answer already applied to `query_id`
    /// returns the stored decision; any other mismatch is a conflict.
    pub fn answer(&mut self, query_id: &str, answer: UserAnswer) -> Result<(DecisionRecord, bool), ServiceError> {
        if let Some(done) = self.doc.trace.iter().find(|d| d.query_id.as_deref() == Some(query_id)) {
            return if done.answer == Some(answer.same_object) {
                Ok((done.clone(), false))
            } else {
                Err(ServiceError::Conflict(format!("query {query_id} was already answered differently")))
            };
        }
        match self.doc.session.answer(query_id, answer) {
            Ok(decision) => {
                self.doc.trace.push(decision.clone());
                Ok((decision, true))
            }
            Err(FollowerError::UnknownQuery(q)) => Err(ServiceError::Conflict(format!("query {q} is not pending"))),
            Err(e) => Err(internal(e)),
        }
    }

    pub fn state(&self) -> SessionState {
        let s = &self.doc.session;
        let eligible = self.doc.trace.iter().filter(|d| d.delta.is_some()).count();
        let labels: std::collections::HashSet<_> = s.memory().entries().iter().map(|e| e.label).collect();
        SessionState {
            session_id: self.doc.id.clone(),
            memory_size: s.memory().len(),
            supervision_size: s.supervision().len(),
            thresholds: s.current_thresholds(),
            recognition_threshold: s.current_recognition_threshold(),
            iterations: s.iteration(),
            queries: s.queries_issued(),
            query_rate: if eligible == 0 {
                0.0
            } else {
                self.doc.trace.iter().filter(|d| d.queried).count() as f64 / eligible as f64
            },
            distinct_labels: labels.len(),
            stream_position: self.doc.cursor,
            stream_length: self.doc.order.len(),
            finished: self.doc.cursor == self.doc.order.len() && s.pending().is_none(),
            pending: s.pending().cloned(),
        }
    }
}

/// All live sessions. Requests on one session serialize on its lock;
/// different sessions proceed in parallel.
pub struct SessionManager {
    data_dir: Option<PathBuf>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<LiveSession>>>>,
    datasets: Mutex<HashMap<PathBuf, Arc<Dataset>>>,
    next_id: Mutex<u64>,
}

fn session_id(n: u64) -> String {
    format!("s{n:06}")
}

impl SessionManager {
    /// In-memory manager without persistence.
    pub fn in_memory() -> Self {
        Self {
            data_dir: None,
            sessions: RwLock::new(BTreeMap::new()),
            datasets: Mutex::new(HashMap::new()),
            next_id: Mutex::new(1),
        }
    }

    /// Manager persisting to `dir`; sessions already there are resumed.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        fs::create_dir_all(dir).map_err(internal)?;
        let manager = Self { data_dir: Some(dir.to_path_buf()), ..Self::in_memory() };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(internal)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut max_id = 0;
        for path in paths {
            let text = fs::read_to_string(&path).map_err(internal)?;
            let doc: Document =
                serde_json::from_str(&text).map_err(|e| internal(format!("{}: {e}", path.display())))?;
            if doc.format != SERVICE_FORMAT || doc.version != SERVICE_VERSION {
                return Err(internal(format!("{}: unsupported session document", path.display())));
            }
            // round-trip through the validating loader
            let session = Session::from_json(&doc.session.to_json().map_err(internal)?).map_err(internal)?;
            let dataset = manager.dataset(&doc.request.manifest)?;
            if doc.order.iter().any(|&i| i >= dataset.len()) || doc.cursor > doc.order.len() {
                return Err(internal(format!("{}: stream does not fit the manifest", path.display())));
            }
            if let Some(n) = doc.id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            let id = doc.id.clone();
            let live = LiveSession { doc: Document { session, ..doc }, dataset };
            manager.sessions.write().expect("lock").insert(id, Arc::new(Mutex::new(live)));
        }
        *manager.next_id.lock().expect("lock") = max_id + 1;
        Ok(manager)
    }

    fn dataset(&self, manifest: &Path) -> Result<Arc<Dataset>, ServiceError> {
        let mut cache = self.datasets.lock().expect("lock");
        if let Some(d) = cache.get(manifest) {
            return Ok(Arc::clone(d));
        }
        let d = Arc::new(load_manifest(manifest).map_err(invalid)?);
        cache.insert(manifest.to_path_buf(), Arc::clone(&d));
        Ok(d)
    }

    fn persist(&self, live: &LiveSession) -> Result<(), ServiceError> {
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        let path = dir.join(format!("{}.json", live.doc.id));
        let tmp = dir.join(format!(".{}.json.tmp", live.doc.id));
        let text = serde_json::to_string(&live.doc).map_err(internal)?;
        fs::write(&tmp, text).map_err(internal)?;
        fs::rename(&tmp, &path).map_err(internal)
    }

    pub fn create(&self, request: CreateSession) -> Result<String, ServiceError> {
        request.session_config()?;
        let dataset = self.dataset(&request.manifest)?;
        let id = {
            let mut next = self.next_id.lock().expect("lock");
            let id = session_id(*next);
            *next += 1;
            id
        };
        let live = LiveSession::new(id.clone(), request, dataset)?;
        self.persist(&live)?;
        self.sessions.write().expect("lock").insert(id.clone(), Arc::new(Mutex::new(live)));
        Ok(id)
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<LiveSession>>, ServiceError> {
        self.sessions.read().expect("lock").get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("lock").keys().cloned().collect()
    }

    pub fn step(&self, id: &str) -> Result<StepResponse, ServiceError> {
        let handle = self.get(id)?;
        let mut live = handle.lock().expect("lock");
        let response = live.step()?;
        if response != StepResponse::EndOfStream {
            self.persist(&live)?;
        }
        Ok(response)
    }

    pub fn pending(&self, id: &str) -> Result<Option<PendingQuery>, ServiceError> {
        Ok(self.get(id)?.lock().expect("lock").session().pending().cloned())
    }

    pub fn answer(&self, id: &str, query_id: &str, answer: UserAnswer) -> Result<DecisionRecord, ServiceError> {
        let handle = self.get(id)?;
        let mut live = handle.lock().expect("lock");
        let (decision, changed) = live.answer(query_id, answer)?;
        if changed {
            self.persist(&live)?;
        }
        Ok(decision)
    }

    pub fn state(&self, id: &str) -> Result<SessionState, ServiceError> {
        Ok(self.get(id)?.lock().expect("lock").state())
    }

    pub fn trace(&self, id: &str) -> Result<Vec<DecisionRecord>, ServiceError> {
        Ok(self.get(id)?.lock().expect("lock").trace().to_vec())
    }
}
