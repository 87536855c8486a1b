//! Closed-world re-identification with and without temporal persistence.
//!
//! Per fold and per object, one sequence goes to the gallery and another one
//! is the probe. Frame-level matching treats every frame as an independent
//! picture; video-level matching compares mean-pooled sequence embeddings.

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rng_from, HarnessError};
use crate::dataset::Dataset;
use crate::embedding::{embed_video, Embedding, Metric};
use crate::metrics::cmc_at_one;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersistenceConfig {
    pub folds: usize,
    pub seed: u64,
    /// Numbers of objects to re-identify; empty means "all objects".
    pub object_counts: Vec<usize>,
    pub metric: Metric,
}

impl Default for PersistenceConfig {
    fn default() -> Self {
        Self { folds: 100, seed: 0, object_counts: Vec::new(), metric: Metric::Euclidean }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePoint {
    pub objects: usize,
    pub frame_cmc: f64,
    pub video_cmc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceResult {
    pub folds: usize,
    pub points: Vec<PersistencePoint>,
}

fn fold_scores(dataset: &Dataset, pairs: &[(usize, usize)], metric: Metric) -> Result<(f64, f64), HarnessError> {
    let label = |i: usize| dataset.sequences[i].true_object.as_deref().unwrap_or_default();
    let mut frame_gallery: Vec<(Embedding, &str)> = Vec::new();
    let mut frame_probes: Vec<(Embedding, &str)> = Vec::new();
    let mut video_gallery = Vec::with_capacity(pairs.len());
    let mut video_probes = Vec::with_capacity(pairs.len());
    for &(g, p) in pairs {
        let (gs, ps) = (&dataset.sequences[g], &dataset.sequences[p]);
        frame_gallery.extend(gs.frames.iter().map(|f| (f.clone(), label(g))));
        frame_probes.extend(ps.frames.iter().map(|f| (f.clone(), label(p))));
        video_gallery.push((embed_video(gs).map_err(crate::follower::FollowerError::from)?, label(g)));
        video_probes.push((embed_video(ps).map_err(crate::follower::FollowerError::from)?, label(p)));
    }
    Ok((cmc_at_one(&frame_gallery, &frame_probes, metric)?, cmc_at_one(&video_gallery, &video_probes, metric)?))
}

pub fn run_persistence(dataset: &Dataset, config: &PersistenceConfig) -> Result<PersistenceResult, HarnessError> {
    if config.folds == 0 {
        return Err(HarnessError::Config("folds must be positive".into()));
    }
    if let Some(s) = dataset.sequences.iter().find(|s| s.true_object.is_none()) {
        return Err(HarnessError::MissingLabel(s.sequence_id.clone()));
    }
    let by_object = dataset.by_object();
    if let Some((o, _)) = by_object.iter().find(|(_, v)| v.len() < 2) {
        return Err(HarnessError::Split(format!("object {o} needs at least two sequences")));
    }
    let total = by_object.len();
    let counts = if config.object_counts.is_empty() { vec![total] } else { config.object_counts.clone() };
    if let Some(&bad) = counts.iter().find(|&&n| n == 0 || n > total) {
        return Err(HarnessError::Config(format!("object count {bad} outside 1..={total}")));
    }
    let objects: Vec<&Vec<usize>> = by_object.values().collect();

    let per_fold: Vec<Vec<(f64, f64)>> = (0..config.folds)
        .into_par_iter()
        .map(|fold| {
            let mut rng = rng_from(config.seed, fold as u64);
            counts
                .iter()
                .map(|&n| {
                    let mut chosen: Vec<&Vec<usize>> = objects.clone();
                    chosen.shuffle(&mut rng);
                    let pairs: Vec<(usize, usize)> = chosen[..n]
                        .iter()
                        .map(|seqs| {
                            let two: Vec<&usize> = seqs.choose_multiple(&mut rng, 2).collect();
                            (*two[0], *two[1])
                        })
                        .collect();
                    fold_scores(dataset, &pairs, config.metric)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let points = counts
        .iter()
        .enumerate()
        .map(|(k, &objects)| {
            let (f, v) = per_fold.iter().fold((0.0, 0.0), |(f, v), fold| (f + fold[k].0, v + fold[k].1));
            PersistencePoint { objects, frame_cmc: f / config.folds as f64, video_cmc: v / config.folds as f64 }
        })
        .collect();
    Ok(PersistenceResult { folds: config.folds, points })
}
