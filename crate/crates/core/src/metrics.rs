//! Evaluation quantities: per-iteration correctness, hold-out recognition
//! fractions, CMC@1, query-rate curves, and clustering agreement (ARI, AMI)
//! over the connected components of predicted "same object" links.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedding, Metric, ObjectId};
use crate::follower::DecisionKind;
use crate::memory::MemoryStore;
use crate::thresholds::DecisionThresholds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("partitions cover different elements")]
    ElementMismatch,
    #[error("sequence {0} links to an unknown or later sequence {1}")]
    DanglingLink(String, String),
    #[error("duplicate sequence id {0}")]
    DuplicateId(String),
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("dimension mismatch")]
    Dimension,
}

/// One processed sequence, with ground truth attached for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub sequence_id: String,
    pub true_object: String,
    pub predicted_label: ObjectId,
    pub kind: DecisionKind,
    pub delta: Option<f64>,
    pub neighbour_sequence_id: Option<String>,
    pub neighbour_true_object: Option<String>,
    /// Sequence linked as "same object" by the decision, if any.
    pub linked_sequence_id: Option<String>,
    pub thresholds: Option<DecisionThresholds>,
    /// Recognition threshold in force just before this decision.
    pub recognition_threshold: Option<f64>,
    pub queried: bool,
    pub forced: bool,
    /// Whether memory already held this object when the sequence arrived.
    pub object_seen_before: bool,
    pub instantaneous_accuracy: u8,
}

pub type DecisionTrace = Vec<TraceRecord>;

/// Correctness of the two-way call "same as nearest neighbour" vs "new".
///
/// `delta`, `neighbour_true_object` and `object_in_memory` describe memory
/// before the sequence is inserted. A missing threshold predicts "new"; an
/// empty memory (no neighbour) counts as an infinitely distant neighbour.
pub fn instantaneous_accuracy(
    delta: Option<f64>,
    true_object: &str,
    neighbour_true_object: Option<&str>,
    object_in_memory: bool,
    recognition_threshold: Option<f64>,
) -> u8 {
    let delta = delta.unwrap_or(f64::INFINITY);
    let lambda = recognition_threshold.unwrap_or(f64::NEG_INFINITY);
    let same = neighbour_true_object == Some(true_object);
    let correct = (delta <= lambda && same) || (delta > lambda && !object_in_memory);
    u8::from(correct)
}

/// Same as [`instantaneous_accuracy`], reading neighbour and membership from a
/// memory snapshot.
pub fn instantaneous_accuracy_in(
    representation: &Embedding,
    true_object: &str,
    memory: &MemoryStore,
    metric: Metric,
    recognition_threshold: Option<f64>,
) -> Result<u8, MetricsError> {
    let nn = match memory.nearest(representation, metric) {
        Ok(nn) => Some(nn),
        Err(crate::memory::MemoryError::EmptyMemory) => None,
        Err(_) => return Err(MetricsError::Dimension),
    };
    let in_memory = memory.entries().iter().any(|e| e.true_object.as_deref() == Some(true_object));
    Ok(instantaneous_accuracy(
        nn.map(|n| n.delta),
        true_object,
        nn.and_then(|n| n.entry.true_object.as_deref()),
        in_memory,
        recognition_threshold,
    ))
}

pub fn averaged_instantaneous_accuracy(trace: &[TraceRecord]) -> Result<f64, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::Empty("trace"));
    }
    let correct: u64 = trace.iter().map(|r| u64::from(r.instantaneous_accuracy)).sum();
    Ok(correct as f64 / trace.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutFractions {
    /// Fraction of hold-out sequences matched to a neighbour of the same object.
    pub seen_correct: f64,
    /// Fraction of hold-out sequences correctly called new.
    pub unseen_correct: f64,
}

/// Scores held-out representations against memory without inserting them.
pub fn holdout_recognition_fractions<'a, I>(
    holdout: I,
    memory: &MemoryStore,
    metric: Metric,
    recognition_threshold: Option<f64>,
) -> Result<HoldoutFractions, MetricsError>
where
    I: IntoIterator<Item = (&'a Embedding, &'a str)>,
{
    let objects: HashSet<&str> = memory.entries().iter().filter_map(|e| e.true_object.as_deref()).collect();
    let lambda = recognition_threshold.unwrap_or(f64::NEG_INFINITY);
    let (mut n, mut seen, mut unseen) = (0usize, 0usize, 0usize);
    for (representation, object) in holdout {
        n += 1;
        let (delta, nn_object) = match memory.nearest(representation, metric) {
            Ok(nn) => (nn.delta, nn.entry.true_object.as_deref()),
            Err(crate::memory::MemoryError::EmptyMemory) => (f64::INFINITY, None),
            Err(_) => return Err(MetricsError::Dimension),
        };
        if delta <= lambda && nn_object == Some(object) {
            seen += 1;
        }
        if delta > lambda && !objects.contains(object) {
            unseen += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::Empty("hold-out set"));
    }
    Ok(HoldoutFractions { seen_correct: seen as f64 / n as f64, unseen_correct: unseen as f64 / n as f64 })
}

/// Fraction of probes whose nearest gallery item has the probe's object.
/// Ties resolve to the earliest gallery item.
pub fn cmc_at_one<O: PartialEq>(
    gallery: &[(Embedding, O)],
    probes: &[(Embedding, O)],
    metric: Metric,
) -> Result<f64, MetricsError> {
    if gallery.is_empty() {
        return Err(MetricsError::Empty("gallery"));
    }
    if probes.is_empty() {
        return Err(MetricsError::Empty("probes"));
    }
    let dim = gallery[0].0.dim();
    let mut hits = 0usize;
    for (probe, object) in probes {
        if probe.dim() != dim {
            return Err(MetricsError::Dimension);
        }
        let mut best = (0usize, f64::INFINITY);
        for (i, (g, _)) in gallery.iter().enumerate() {
            if g.dim() != dim {
                return Err(MetricsError::Dimension);
            }
            let d = metric.distance_unchecked(probe.as_slice(), g.as_slice());
            if d < best.1 {
                best = (i, d);
            }
        }
        if gallery[best.0].1 == *object {
            hits += 1;
        }
    }
    Ok(hits as f64 / probes.len() as f64)
}

/// Trailing moving average of the query flag.
///
/// Only iterations that could query (memory non-empty, i.e. `delta` present)
/// enter the average. Entry `i` averages the last `window` such iterations up
/// to and including `i`, and is `None` until `window` of them exist.
pub fn query_rate_curve(trace: &[TraceRecord], window: usize) -> Result<Vec<Option<f64>>, MetricsError> {
    let flags: Vec<(bool, bool)> = trace.iter().map(|r| (r.delta.is_some(), r.queried)).collect();
    query_rate_curve_from_flags(&flags, window)
}

/// As [`query_rate_curve`], over `(eligible, queried)` pairs.
pub fn query_rate_curve_from_flags(flags: &[(bool, bool)], window: usize) -> Result<Vec<Option<f64>>, MetricsError> {
    if window == 0 {
        return Err(MetricsError::ZeroWindow);
    }
    let mut recent = std::collections::VecDeque::with_capacity(window);
    let mut sum = 0usize;
    let mut out = Vec::with_capacity(flags.len());
    for &(eligible, queried) in flags {
        if eligible {
            recent.push_back(queried);
            sum += usize::from(queried);
            if recent.len() > window {
                sum -= usize::from(recent.pop_front().unwrap_or(false));
            }
        }
        out.push((recent.len() == window).then(|| sum as f64 / window as f64));
    }
    Ok(out)
}

/// A partition of sequence ids into disjoint clusters, kept in canonical
/// form (each cluster sorted, clusters ordered by their smallest member) so
/// equal partitions compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    clusters: Vec<Vec<String>>,
}

impl Clustering {
    pub fn from_clusters<I, C, S>(clusters: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = C>,
        C: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut out: Vec<Vec<String>> = Vec::new();
        for c in clusters {
            let mut members: Vec<String> = c.into_iter().map(Into::into).collect();
            for m in &members {
                if !seen.insert(m.clone()) {
                    return Err(MetricsError::DuplicateId(m.clone()));
                }
            }
            if members.is_empty() {
                continue;
            }
            members.sort();
            out.push(members);
        }
        out.sort();
        Ok(Self { clusters: out })
    }

    /// Groups `(element, label)` pairs by label.
    pub fn from_labels<E, L>(pairs: impl IntoIterator<Item = (E, L)>) -> Result<Self, MetricsError>
    where
        E: Into<String>,
        L: Ord,
    {
        let mut groups: BTreeMap<L, Vec<String>> = BTreeMap::new();
        for (e, l) in pairs {
            groups.entry(l).or_default().push(e.into());
        }
        Self::from_clusters(groups.into_values())
    }

    pub fn clusters(&self) -> &[Vec<String>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// Keeps only the given elements, dropping clusters that become empty.
    pub fn restrict(&self, keep: &HashSet<&str>) -> Clustering {
        let clusters = self
            .clusters
            .iter()
            .map(|c| c.iter().filter(|e| keep.contains(e.as_str())).cloned().collect::<Vec<_>>())
            .filter(|c| !c.is_empty())
            .collect::<Vec<_>>();
        let mut out = Clustering { clusters };
        out.clusters.sort();
        out
    }

    fn assignment(&self) -> HashMap<&str, usize> {
        self.clusters.iter().enumerate().flat_map(|(k, c)| c.iter().map(move |e| (e.as_str(), k))).collect()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        match self.rank[a].cmp(&self.rank[b]) {
            std::cmp::Ordering::Less => self.parent[a] = b,
            std::cmp::Ordering::Greater => self.parent[b] = a,
            std::cmp::Ordering::Equal => {
                self.parent[b] = a;
                self.rank[a] += 1;
            }
        }
    }
}

/// Connected components of the undirected "same object" link graph.
/// Each link must point at a sequence listed earlier.
pub fn extract_clusters<S: AsRef<str>>(predictions: &[(S, Option<S>)]) -> Result<Clustering, MetricsError> {
    let mut seen: HashSet<&str> = HashSet::with_capacity(predictions.len());
    let mut edges = Vec::new();
    for (id, link) in predictions {
        let id = id.as_ref();
        if let Some(link) = link {
            if !seen.contains(link.as_ref()) {
                return Err(MetricsError::DanglingLink(id.to_string(), link.as_ref().to_string()));
            }
            edges.push((id, link.as_ref()));
        }
        if !seen.insert(id) {
            return Err(MetricsError::DuplicateId(id.to_string()));
        }
    }
    let nodes: Vec<&str> = predictions.iter().map(|(id, _)| id.as_ref()).collect();
    components(&nodes, &edges)
}

/// Connected components over `nodes` for an arbitrary edge list.
pub fn components(nodes: &[&str], edges: &[(&str, &str)]) -> Result<Clustering, MetricsError> {
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(nodes.len());
    for (i, &id) in nodes.iter().enumerate() {
        if index.insert(id, i).is_some() {
            return Err(MetricsError::DuplicateId(id.to_string()));
        }
    }
    let mut dsu = DisjointSet::new(nodes.len());
    for &(a, b) in edges {
        let lookup =
            |x: &str| index.get(x).copied().ok_or_else(|| MetricsError::DanglingLink(a.to_string(), b.to_string()));
        dsu.union(lookup(a)?, lookup(b)?);
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, &id) in nodes.iter().enumerate() {
        groups.entry(dsu.find(i)).or_default().push(id.to_string());
    }
    Clustering::from_clusters(groups.into_values())
}

struct Contingency {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    cells: Vec<usize>,
}

fn contingency(pred: &Clustering, truth: &Clustering) -> Result<Contingency, MetricsError> {
    let a = pred.assignment();
    let b = truth.assignment();
    if a.len() != b.len() {
        return Err(MetricsError::ElementMismatch);
    }
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (e, &i) in &a {
        let &j = b.get(e).ok_or(MetricsError::ElementMismatch)?;
        *table.entry((i, j)).or_default() += 1;
    }
    Ok(Contingency {
        n: a.len(),
        rows: pred.clusters.iter().map(Vec::len).collect(),
        cols: truth.clusters.iter().map(Vec::len).collect(),
        cells: table.into_values().collect(),
    })
}

fn pairs(k: usize) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

/// Adjusted Rand index under the permutation model.
pub fn adjusted_rand_index(pred: &Clustering, truth: &Clustering) -> Result<f64, MetricsError> {
    let t = contingency(pred, truth)?;
    if t.n == 0 {
        return Err(MetricsError::Empty("partition"));
    }
    if pred == truth {
        return Ok(1.0);
    }
    let index: f64 = t.cells.iter().map(|&c| pairs(c)).sum();
    let sum_rows: f64 = t.rows.iter().map(|&c| pairs(c)).sum();
    let sum_cols: f64 = t.cols.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.n);
    let expected = sum_rows * sum_cols / total;
    let max_index = (sum_rows + sum_cols) / 2.0;
    let denom = max_index - expected;
    if denom == 0.0 {
        // both partitions trivial in the same way; only reachable when equal
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

fn entropy_nats(sizes: &[usize], n: usize) -> f64 {
    let n = n as f64;
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn log_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0f64;
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Expected mutual information (nats) of two partitions with the given
/// marginals under the hypergeometric permutation model.
fn expected_mutual_information(rows: &[usize], cols: &[usize], n: usize) -> f64 {
    let lf = log_factorials(n);
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in rows {
        for &b in cols {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            for nij in lo..=hi {
                let nij_f = nij as f64;
                let term = (nij_f / nf) * (nf * nij_f / (a as f64 * b as f64)).ln();
                let log_p = lf[a] + lf[b] + lf[n - a] + lf[n - b]
                    - lf[n]
                    - lf[nij]
                    - lf[a - nij]
                    - lf[b - nij]
                    - lf[n + nij - a - b];
                emi += term * log_p.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information with max-entropy normalisation.
///
/// Identical partitions score 1. If either partition has zero entropy and
/// they differ, the score is 0.
pub fn adjusted_mutual_information(pred: &Clustering, truth: &Clustering) -> Result<f64, MetricsError> {
    let t = contingency(pred, truth)?;
    if t.n == 0 {
        return Err(MetricsError::Empty("partition"));
    }
    if pred == truth {
        return Ok(1.0);
    }
    let h_pred = entropy_nats(&t.rows, t.n);
    let h_truth = entropy_nats(&t.cols, t.n);
    if h_pred == 0.0 || h_truth == 0.0 {
        return Ok(0.0);
    }
    let nf = t.n as f64;
    let a = pred.assignment();
    let b = truth.assignment();
    // mutual information from the joint table
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (e, &i) in &a {
        *joint.entry((i, b[e])).or_default() += 1;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(i, j), &c)| {
            let c = c as f64;
            (c / nf) * (nf * c / (t.rows[i] as f64 * t.cols[j] as f64)).ln()
        })
        .sum();
    let emi = expected_mutual_information(&t.rows, &t.cols, t.n);
    let denom = h_pred.max(h_truth) - emi;
    if denom.abs() < f64::EPSILON {
        return Ok(0.0);
    }
    Ok((mi - emi) / denom)
}
