//! Multi-fold open-world experiment.
//!
//! Per fold: split the dataset, run the interactive phase on the training
//! sequences (optionally alongside the always-ask baseline on the very same
//! stream), then present the held-out objects' sequences to the trained
//! model with queries disabled and the recognition threshold frozen, once
//! per evaluation ordering.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    derive_seed, generate_synthetic, make_split, rng_from, stream_order, HarnessError, Oracle, SplitPlan, StreamPolicy,
    SyntheticConfig,
};
use crate::dataset::Dataset;
use crate::embedding::{embed_video, Embedding, Metric};
use crate::follower::{DecisionRecord, FullSupervision, Mode, Session, SessionConfig};
use crate::io::load_manifest;
use crate::memory::MemoryStore;
use crate::metrics::{
    adjusted_mutual_information, adjusted_rand_index, averaged_instantaneous_accuracy, components,
    holdout_recognition_fractions, instantaneous_accuracy, query_rate_curve, Clustering, HoldoutFractions, TraceRecord,
};
use crate::thresholds::{recognition_threshold, DecisionThresholds, EffortBudget};

pub const SUMMARY_FORMAT: &str = "follower-summary";
pub const SUMMARY_VERSION: u32 = 1;

// sub-stream indices under a fold seed
const RNG_SPLIT: u64 = 0;
const RNG_TRAIN_STREAM: u64 = 1;
const RNG_EVAL_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    /// Path to a manifest file, relative paths resolved against the working directory.
    Manifest(PathBuf),
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset, HarnessError> {
        match self {
            DatasetSource::Synthetic(c) => generate_synthetic(c),
            DatasetSource::Manifest(p) => Ok(load_manifest(p)?),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub train_policy: StreamPolicy,
    #[serde(default = "ExperimentConfig::default_eval_policies")]
    pub eval_policies: Vec<StreamPolicy>,
    pub alpha: f64,
    #[serde(default = "ExperimentConfig::default_bootstrap")]
    pub bootstrap_queries: usize,
    #[serde(default = "ExperimentConfig::default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "ExperimentConfig::default_heldout")]
    pub heldout_count: usize,
    /// Also run the always-ask baseline on each training stream.
    #[serde(default = "default_true")]
    pub baseline: bool,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub normalize: bool,
    /// Score the in-training evaluation set every this many iterations (0 = never).
    #[serde(default = "ExperimentConfig::default_holdout_every")]
    pub holdout_every: usize,
    /// Moving-average window for query-rate curves.
    #[serde(default = "ExperimentConfig::default_curve_window")]
    pub curve_window: usize,
}

impl ExperimentConfig {
    fn default_eval_policies() -> Vec<StreamPolicy> {
        vec![StreamPolicy::random(), StreamPolicy::devel()]
    }
    fn default_bootstrap() -> usize {
        10
    }
    fn default_folds() -> usize {
        50
    }
    fn default_heldout() -> usize {
        10
    }
    fn default_holdout_every() -> usize {
        10
    }
    fn default_curve_window() -> usize {
        10
    }

    /// A config with every optional field at its default.
    pub fn new(dataset: DatasetSource, train_policy: StreamPolicy, alpha: f64) -> Self {
        Self {
            dataset,
            train_policy,
            eval_policies: Self::default_eval_policies(),
            alpha,
            bootstrap_queries: Self::default_bootstrap(),
            folds: Self::default_folds(),
            seed: 0,
            heldout_count: Self::default_heldout(),
            baseline: true,
            metric: Metric::Euclidean,
            normalize: false,
            holdout_every: Self::default_holdout_every(),
            curve_window: Self::default_curve_window(),
        }
    }

    pub fn session_config(&self, seed: u64) -> Result<SessionConfig, HarnessError> {
        let config = SessionConfig {
            alpha: EffortBudget::new(self.alpha).map_err(|e| HarnessError::Config(e.to_string()))?,
            bootstrap_queries: self.bootstrap_queries,
            mode: Mode::Active,
            metric: self.metric,
            normalize: self.normalize,
            seed,
        };
        config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(config)
    }

    /// Checks everything that can be checked without running a fold.
    pub fn validate(&self, dataset: &Dataset) -> Result<(), HarnessError> {
        if self.folds == 0 {
            return Err(HarnessError::Config("folds must be positive".into()));
        }
        if self.curve_window == 0 {
            return Err(HarnessError::Config("curve_window must be positive".into()));
        }
        self.session_config(0)?;
        self.train_policy.validate()?;
        for p in &self.eval_policies {
            p.validate()?;
        }
        let names: HashSet<&str> = self.eval_policies.iter().map(StreamPolicy::name).collect();
        if names.len() != self.eval_policies.len() {
            return Err(HarnessError::Config("eval_policies must not repeat a kind".into()));
        }
        make_split(dataset, &mut rng_from(self.seed, 0), self.heldout_count)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutPoint {
    pub iteration: u64,
    pub follower: HoldoutFractions,
    pub baseline: Option<HoldoutFractions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPhase {
    pub policy: String,
    pub recognition_threshold: f64,
    pub trace: Vec<TraceRecord>,
    pub aia: f64,
    pub ari: f64,
    pub ami: f64,
    pub clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub split: SplitPlan,
    pub training: Vec<TraceRecord>,
    pub baseline: Option<Vec<TraceRecord>>,
    pub holdout: Vec<HoldoutPoint>,
    pub supervision_size: usize,
    pub final_thresholds: Option<DecisionThresholds>,
    pub final_recognition_threshold: f64,
    pub unsupervised: Vec<EvalPhase>,
}

/// Query rate over iterations that were neither the first (empty memory)
/// nor bootstrap-forced. `None` if no such iteration exists.
pub fn post_bootstrap_query_rate(trace: &[TraceRecord]) -> Option<f64> {
    let eligible: Vec<&TraceRecord> = trace.iter().filter(|r| r.delta.is_some() && !r.forced).collect();
    if eligible.is_empty() {
        return None;
    }
    Some(eligible.iter().filter(|r| r.queried).count() as f64 / eligible.len() as f64)
}

/// Evaluation-side bookkeeping shared by the supervised and unsupervised phases.
struct Tracker {
    seen: HashSet<String>,
    trace: Vec<TraceRecord>,
}

impl Tracker {
    fn new() -> Self {
        Self { seen: HashSet::new(), trace: Vec::new() }
    }

    /// `lambda_r` must be the threshold in force before the decision, and
    /// `memory` the store after it (the neighbour index is stable).
    fn record(&mut self, d: &DecisionRecord, true_object: &str, memory: &MemoryStore, lambda_r: Option<f64>) {
        let seen_before = self.seen.contains(true_object);
        let nn_object = d.neighbour_index.and_then(|i| memory.get(i)).and_then(|e| e.true_object.clone());
        let acc = instantaneous_accuracy(d.delta, true_object, nn_object.as_deref(), seen_before, lambda_r);
        self.trace.push(TraceRecord {
            iteration: d.iteration,
            sequence_id: d.sequence_id.clone(),
            true_object: true_object.to_string(),
            predicted_label: d.label,
            kind: d.kind,
            delta: d.delta,
            neighbour_sequence_id: d.neighbour_sequence_id.clone(),
            neighbour_true_object: nn_object,
            linked_sequence_id: d.linked_sequence().map(str::to_string),
            thresholds: d.thresholds,
            recognition_threshold: lambda_r,
            queried: d.queried,
            forced: d.forced,
            object_seen_before: seen_before,
            instantaneous_accuracy: acc,
        });
        self.seen.insert(true_object.to_string());
    }
}

fn label_of(dataset: &Dataset, i: usize) -> &str {
    dataset.sequences[i].true_object.as_deref().expect("split checked labels")
}

/// Runs one fold with the fold's derived seed.
pub fn run_fold(config: &ExperimentConfig, dataset: &Dataset, fold: usize) -> Result<FoldResult, HarnessError> {
    let seed = derive_seed(config.seed, fold as u64);
    let split = make_split(dataset, &mut rng_from(seed, RNG_SPLIT), config.heldout_count)?;

    let train_items: Vec<(usize, &str)> = split.train.iter().map(|&i| (i, label_of(dataset, i))).collect();
    let order = stream_order(&config.train_policy, &train_items, &mut rng_from(seed, RNG_TRAIN_STREAM));

    let eval_reps: Vec<(Embedding, &str)> = split
        .eval
        .iter()
        .map(|&i| {
            let r = embed_video(&dataset.sequences[i]).map_err(crate::follower::FollowerError::from)?;
            Ok((if config.normalize { r.l2_normalized() } else { r }, label_of(dataset, i)))
        })
        .collect::<Result<_, HarnessError>>()?;
    let holdout_due = |step: usize| {
        config.holdout_every > 0 && ((step + 1).is_multiple_of(config.holdout_every) || step + 1 == order.len())
    };
    let score_holdout = |memory: &MemoryStore, lambda: Option<f64>| {
        holdout_recognition_fractions(eval_reps.iter().map(|(e, o)| (e, *o)), memory, config.metric, lambda)
    };

    // interactive phase
    let mut session = Session::new(config.session_config(seed)?)?;
    let mut oracle = Oracle::default();
    let mut tracker = Tracker::new();
    let mut holdout = Vec::new();
    for (step, &i) in order.iter().enumerate() {
        let sample = &dataset.sequences[i];
        let lambda_r = session.current_recognition_threshold();
        let d = session.process(sample, &mut oracle)?.decided().expect("the oracle answers every query");
        tracker.record(&d, label_of(dataset, i), session.memory(), lambda_r);
        if holdout_due(step) {
            holdout.push(HoldoutPoint {
                iteration: d.iteration,
                follower: score_holdout(session.memory(), session.current_recognition_threshold())?,
                baseline: None,
            });
        }
    }

    let baseline = if config.baseline {
        let mut full = FullSupervision::new(config.metric, config.normalize);
        let mut tracker = Tracker::new();
        let mut points = holdout.iter_mut();
        for (step, &i) in order.iter().enumerate() {
            let lambda_r = recognition_threshold(full.supervision()).ok().map(|r| r.lambda);
            let d = full.process(&dataset.sequences[i], &mut oracle)?;
            tracker.record(&d, label_of(dataset, i), full.memory(), lambda_r);
            if holdout_due(step) {
                let lambda = recognition_threshold(full.supervision()).ok().map(|r| r.lambda);
                if let Some(p) = points.next() {
                    p.baseline = Some(score_holdout(full.memory(), lambda)?);
                }
            }
        }
        Some(tracker.trace)
    } else {
        None
    };

    let training = tracker.trace;
    let supervision_size = session.supervision().len();
    let final_thresholds = session.current_thresholds();
    let lambda = recognition_threshold(session.supervision())
        .map_err(|_| crate::follower::FollowerError::NoRecognitionThreshold)?
        .lambda;

    // unsupervised phase, one run per ordering, each from the trained state
    let heldout_items: Vec<(usize, &str)> = split.unsupervised.iter().map(|&i| (i, label_of(dataset, i))).collect();
    let training_links: Vec<(String, String)> =
        training.iter().filter_map(|r| r.linked_sequence_id.clone().map(|l| (r.sequence_id.clone(), l))).collect();
    let mut unsupervised = Vec::with_capacity(config.eval_policies.len());
    for (k, policy) in config.eval_policies.iter().enumerate() {
        let mut rng = rng_from(derive_seed(seed, RNG_EVAL_STREAM), k as u64);
        let eval_order = stream_order(policy, &heldout_items, &mut rng);
        let mut eval_session = session.clone();
        eval_session.freeze_unsupervised(Some(lambda))?;
        let mut eval_tracker = Tracker::new();
        for &i in &eval_order {
            let d = eval_session
                .process(&dataset.sequences[i], &mut oracle)?
                .decided()
                .expect("unsupervised mode never queries");
            eval_tracker.record(&d, label_of(dataset, i), eval_session.memory(), Some(lambda));
        }
        let trace = eval_tracker.trace;
        let aia = averaged_instantaneous_accuracy(&trace)?;

        // components over every sequence in memory, restricted to the held-out ones
        let nodes: Vec<&str> = eval_session.memory().entries().iter().map(|e| e.sequence_id.as_str()).collect();
        let edges: Vec<(&str, &str)> = training_links
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .chain(trace.iter().filter_map(|r| r.linked_sequence_id.as_deref().map(|l| (r.sequence_id.as_str(), l))))
            .collect();
        let eval_ids: HashSet<&str> = trace.iter().map(|r| r.sequence_id.as_str()).collect();
        let predicted = components(&nodes, &edges)?.restrict(&eval_ids);
        let truth = Clustering::from_labels(trace.iter().map(|r| (r.sequence_id.clone(), r.true_object.clone())))?;
        unsupervised.push(EvalPhase {
            policy: policy.name().to_string(),
            recognition_threshold: lambda,
            aia,
            ari: adjusted_rand_index(&predicted, &truth)?,
            ami: adjusted_mutual_information(&predicted, &truth)?,
            clusters: predicted.len(),
            trace,
        });
    }

    Ok(FoldResult {
        fold,
        seed,
        split,
        training,
        baseline,
        holdout,
        supervision_size,
        final_thresholds,
        final_recognition_threshold: lambda,
        unsupervised,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub policy: String,
    pub aia: f64,
    pub ari: f64,
    pub ami: f64,
    pub clusters: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format: String,
    pub version: u32,
    pub folds: usize,
    pub alpha: f64,
    pub train_policy: String,
    /// Mean |K| at the end of the interactive phase.
    pub supervision_size: f64,
    pub training_iterations: usize,
    pub query_rate: f64,
    pub post_bootstrap_query_rate: Option<f64>,
    pub training_aia: f64,
    pub baseline_training_aia: Option<f64>,
    pub final_lower_threshold: Option<f64>,
    pub final_upper_threshold: Option<f64>,
    pub final_recognition_threshold: f64,
    pub ami_normalization: String,
    pub unsupervised: Vec<PhaseSummary>,
}

/// Per-iteration means over folds. Holdout columns are `None` where no fold
/// scored the hold-out set at that iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurves {
    pub window: usize,
    pub unseen_objects: Vec<f64>,
    pub follower_query_rate: Vec<Option<f64>>,
    pub baseline_query_rate: Vec<Option<f64>>,
    pub follower_accuracy: Vec<f64>,
    pub baseline_accuracy: Vec<Option<f64>>,
    pub follower_holdout: Vec<Option<HoldoutFractions>>,
    pub baseline_holdout: Vec<Option<HoldoutFractions>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub folds: Vec<FoldResult>,
    pub summary: Summary,
    pub curves: AggregateCurves,
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

fn mean_opt(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.into_iter().flatten().collect();
    (!present.is_empty()).then(|| mean(present))
}

fn summarize(config: &ExperimentConfig, folds: &[FoldResult]) -> Summary {
    let training_iterations = folds.first().map_or(0, |f| f.training.len());
    let query_rate = mean(folds.iter().map(|f| {
        let eligible = f.training.iter().filter(|r| r.delta.is_some()).count().max(1);
        f.training.iter().filter(|r| r.queried).count() as f64 / eligible as f64
    }));
    let aia = |t: &[TraceRecord]| averaged_instantaneous_accuracy(t).unwrap_or(0.0);
    let unsupervised = config
        .eval_policies
        .iter()
        .enumerate()
        .map(|(k, p)| PhaseSummary {
            policy: p.name().to_string(),
            aia: mean(folds.iter().map(|f| f.unsupervised[k].aia)),
            ari: mean(folds.iter().map(|f| f.unsupervised[k].ari)),
            ami: mean(folds.iter().map(|f| f.unsupervised[k].ami)),
            clusters: mean(folds.iter().map(|f| f.unsupervised[k].clusters as f64)),
        })
        .collect();
    Summary {
        format: SUMMARY_FORMAT.to_string(),
        version: SUMMARY_VERSION,
        folds: folds.len(),
        alpha: config.alpha,
        train_policy: config.train_policy.name().to_string(),
        supervision_size: mean(folds.iter().map(|f| f.supervision_size as f64)),
        training_iterations,
        query_rate,
        post_bootstrap_query_rate: mean_opt(folds.iter().map(|f| post_bootstrap_query_rate(&f.training))),
        training_aia: mean(folds.iter().map(|f| aia(&f.training))),
        baseline_training_aia: mean_opt(folds.iter().map(|f| f.baseline.as_deref().map(aia))),
        final_lower_threshold: mean_opt(folds.iter().map(|f| f.final_thresholds.map(|t| t.lower))),
        final_upper_threshold: mean_opt(folds.iter().map(|f| f.final_thresholds.map(|t| t.upper))),
        final_recognition_threshold: mean(folds.iter().map(|f| f.final_recognition_threshold)),
        ami_normalization: "max".to_string(),
        unsupervised,
    }
}

fn aggregate_curves(
    dataset: &Dataset,
    config: &ExperimentConfig,
    folds: &[FoldResult],
) -> Result<AggregateCurves, HarnessError> {
    let n = folds.first().map_or(0, |f| f.training.len());
    let w = config.curve_window;
    let curves: Vec<Vec<Option<f64>>> =
        folds.iter().map(|f| query_rate_curve(&f.training, w)).collect::<Result<_, _>>()?;
    let base_curves: Vec<Vec<Option<f64>>> =
        folds.iter().filter_map(|f| f.baseline.as_deref().map(|b| query_rate_curve(b, w))).collect::<Result<_, _>>()?;
    let column_mean = |cs: &[Vec<Option<f64>>], i: usize| mean_opt(cs.iter().map(|c| c[i]));

    let mut unseen_objects = Vec::with_capacity(n);
    let mut follower_accuracy = Vec::with_capacity(n);
    let mut baseline_accuracy = Vec::with_capacity(n);
    for i in 0..n {
        unseen_objects.push(mean(folds.iter().map(|f| {
            let total: HashSet<&str> = f.split.train.iter().map(|&k| label_of(dataset, k)).collect();
            let shown: HashSet<&str> = f.training[..=i].iter().map(|r| r.true_object.as_str()).collect();
            1.0 - shown.len() as f64 / total.len() as f64
        })));
        follower_accuracy.push(mean(folds.iter().map(|f| f64::from(f.training[i].instantaneous_accuracy))));
        baseline_accuracy
            .push(mean_opt(folds.iter().map(|f| f.baseline.as_ref().map(|b| f64::from(b[i].instantaneous_accuracy)))));
    }

    let mut follower_holdout = vec![None; n];
    let mut baseline_holdout = vec![None; n];
    let iterations: Vec<u64> = folds.first().map_or(Vec::new(), |f| f.holdout.iter().map(|p| p.iteration).collect());
    for (k, &it) in iterations.iter().enumerate() {
        let avg = |pick: &dyn Fn(&HoldoutPoint) -> Option<HoldoutFractions>| {
            let got: Vec<HoldoutFractions> = folds.iter().filter_map(|f| f.holdout.get(k).and_then(pick)).collect();
            (!got.is_empty()).then(|| HoldoutFractions {
                seen_correct: mean(got.iter().map(|h| h.seen_correct)),
                unseen_correct: mean(got.iter().map(|h| h.unseen_correct)),
            })
        };
        follower_holdout[it as usize] = avg(&|p| Some(p.follower));
        baseline_holdout[it as usize] = avg(&|p| p.baseline);
    }

    Ok(AggregateCurves {
        window: w,
        unseen_objects,
        follower_query_rate: (0..n).map(|i| column_mean(&curves, i)).collect(),
        baseline_query_rate: (0..n).map(|i| column_mean(&base_curves, i)).collect(),
        follower_accuracy,
        baseline_accuracy,
        follower_holdout,
        baseline_holdout,
    })
}

/// Runs every fold (in parallel) and aggregates. Fold order, and therefore
/// every output, is independent of thread scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let dataset = config.dataset.load()?;
    run_experiment_on(config, &dataset)
}

/// As [`run_experiment`] with an already-loaded dataset (`config.dataset` is ignored).
pub fn run_experiment_on(config: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentResult, HarnessError> {
    config.validate(dataset)?;
    let folds: Vec<FoldResult> =
        (0..config.folds).into_par_iter().map(|fold| run_fold(config, dataset, fold)).collect::<Result<_, _>>()?;
    let summary = summarize(config, &folds);
    let curves = aggregate_curves(dataset, config, &folds)?;
    Ok(ExperimentResult { folds, summary, curves })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn trace_rows(out: &mut String, phase: &str, trace: &[TraceRecord]) {
    for r in trace {
        let _ = writeln!(
            out,
            "{phase},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.sequence_id,
            r.true_object,
            r.predicted_label,
            serde_json::to_value(r.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            opt(r.delta),
            r.neighbour_sequence_id.as_deref().unwrap_or_default(),
            r.linked_sequence_id.as_deref().unwrap_or_default(),
            opt(r.thresholds.map(|t| t.lower)),
            opt(r.thresholds.map(|t| t.upper)),
            opt(r.recognition_threshold),
            u8::from(r.queried),
            u8::from(r.forced),
            u8::from(r.object_seen_before),
            r.instantaneous_accuracy,
            r.neighbour_true_object.as_deref().unwrap_or_default(),
        );
    }
}

pub const TRACE_HEADER: &str = "phase,iteration,sequence_id,true_object,predicted_label,kind,delta,neighbour_sequence_id,linked_sequence_id,lambda_lower,lambda_upper,lambda_r,queried,forced,object_seen_before,instantaneous_accuracy,neighbour_true_object";

pub fn fold_trace_csv(fold: &FoldResult) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    trace_rows(&mut out, "train", &fold.training);
    if let Some(b) = &fold.baseline {
        trace_rows(&mut out, "baseline", b);
    }
    for phase in &fold.unsupervised {
        trace_rows(&mut out, &format!("eval_{}", phase.policy), &phase.trace);
    }
    out
}

pub fn curves_csv(curves: &AggregateCurves) -> String {
    let mut out = String::from(
        "iteration,unseen_objects,follower_query_rate,baseline_query_rate,follower_accuracy,baseline_accuracy,follower_holdout_seen,follower_holdout_unseen,baseline_holdout_seen,baseline_holdout_unseen\n",
    );
    for i in 0..curves.unseen_objects.len() {
        let h = |x: Option<HoldoutFractions>| (opt(x.map(|h| h.seen_correct)), opt(x.map(|h| h.unseen_correct)));
        let (fs, fu) = h(curves.follower_holdout[i]);
        let (bs, bu) = h(curves.baseline_holdout[i]);
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{fs},{fu},{bs},{bu}",
            curves.unseen_objects[i],
            opt(curves.follower_query_rate[i]),
            opt(curves.baseline_query_rate[i]),
            curves.follower_accuracy[i],
            opt(curves.baseline_accuracy[i]),
        );
    }
    out
}

/// Writes `config.json`, `summary.json`, `curves.csv` and `fold_<i>/trace.csv`.
pub fn write_run(dir: &Path, config: &ExperimentConfig, result: &ExperimentResult) -> Result<(), HarnessError> {
    let write = |path: PathBuf, contents: String| {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| HarnessError::Io { path: parent.to_path_buf(), source })?;
        }
        fs::write(&path, contents).map_err(|source| HarnessError::Io { path, source })
    };
    write(dir.join("config.json"), serde_json::to_string_pretty(config)? + "\n")?;
    write(dir.join("summary.json"), serde_json::to_string_pretty(&result.summary)? + "\n")?;
    write(dir.join("curves.csv"), curves_csv(&result.curves))?;
    for fold in &result.folds {
        write(dir.join(format!("fold_{}", fold.fold)).join("trace.csv"), fold_trace_csv(fold))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::follower::DecisionKind;

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            DatasetSource::Synthetic(SyntheticConfig {
                objects: 12,
                sequences_per_object: 3,
                frames: 4,
                dim: 8,
                intra_object_sigma: 0.5,
                ..Default::default()
            }),
            StreamPolicy::devel(),
            0.5,
        );
        c.folds = 3;
        c.heldout_count = 3;
        c.bootstrap_queries = 3;
        c.holdout_every = 5;
        c.curve_window = 4;
        c
    }

    #[test]
    fn fold_shapes() {
        let config = tiny_config();
        let r = run_experiment(&config).unwrap();
        assert_eq!(r.folds.len(), 3);
        let f = &r.folds[0];
        assert_eq!(f.training.len(), 9 * 2);
        assert_eq!(f.baseline.as_ref().unwrap().len(), 18);
        assert_eq!(f.unsupervised.len(), 2);
        assert_eq!(f.unsupervised[0].trace.len(), 9);
        // every training sequence appears once
        let ids: HashSet<&str> = f.training.iter().map(|r| r.sequence_id.as_str()).collect();
        assert_eq!(ids.len(), 18);
        // baseline queries on every iteration but the first
        let b = f.baseline.as_ref().unwrap();
        assert_eq!(b.iter().filter(|r| r.queried).count(), 17);
        assert_eq!(b[0].kind, DecisionKind::DeclaredNew);
        // unsupervised phases never query and |K| is unchanged
        assert!(f.unsupervised.iter().all(|p| p.trace.iter().all(|r| !r.queried)));
        assert_eq!(f.supervision_size, f.training.iter().filter(|r| r.queried).count());
        assert_eq!(r.curves.unseen_objects.len(), 18);
        assert!(r.curves.follower_holdout[4].is_some());
        assert!(r.curves.follower_holdout[17].is_some());
        assert!(r.curves.follower_holdout[3].is_none());
    }

    #[test]
    fn metrics_lie_in_unit_interval() {
        let r = run_experiment(&tiny_config()).unwrap();
        let s = &r.summary;
        for v in [s.query_rate, s.training_aia] {
            assert!((0.0..=1.0).contains(&v));
        }
        for p in &s.unsupervised {
            assert!((0.0..=1.0).contains(&p.aia));
        }
        for h in r.curves.follower_holdout.iter().flatten() {
            assert!((0.0..=1.0).contains(&h.seen_correct) && (0.0..=1.0).contains(&h.unseen_correct));
        }
    }

    #[test]
    fn config_errors_surface_before_running() {
        let mut c = tiny_config();
        c.alpha = 1.5;
        assert!(matches!(run_experiment(&c), Err(HarnessError::Config(_))));
        let mut c = tiny_config();
        c.heldout_count = 12;
        assert!(matches!(run_experiment(&c), Err(HarnessError::Split(_))));
        let mut c = tiny_config();
        c.eval_policies = vec![StreamPolicy::devel(), StreamPolicy::devel()];
        assert!(run_experiment(&c).is_err());
        let mut c = tiny_config();
        c.folds = 0;
        assert!(run_experiment(&c).is_err());
    }

    #[test]
    fn config_json_defaults() {
        let json = r#"{"dataset":{"synthetic":{"objects":5,"intra_object_sigma":0.3}},"train_policy":{"kind":"random"},"alpha":0.9}"#;
        let c: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.folds, 50);
        assert_eq!(c.bootstrap_queries, 10);
        assert_eq!(c.eval_policies.len(), 2);
        assert_eq!(c.train_policy.p_new, 0.3);
        match &c.dataset {
            DatasetSource::Synthetic(s) => assert_eq!((s.objects, s.dim), (5, 64)),
            other => panic!("{other:?}"),
        }
    }
}
