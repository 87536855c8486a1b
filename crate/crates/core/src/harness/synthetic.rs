use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ExperimentRng, HarnessError};
use crate::dataset::Dataset;
use crate::embedding::{Embedding, SequenceSample};

/// Gaussian stand-in for CNN features: each object has a center drawn from
/// `N(0, spread^2 I)`, each frame is its center plus `N(0, sigma^2 I)` noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub objects: usize,
    pub sequences_per_object: usize,
    pub frames: usize,
    pub dim: usize,
    pub intra_object_sigma: f64,
    pub inter_object_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// 100 objects x 5 sequences x 10 frames in 64 dimensions. The noise
    /// level puts frame-level CMC@1 (one gallery and one probe sequence per
    /// object) at roughly 0.6.
    fn default() -> Self {
        Self {
            objects: 100,
            sequences_per_object: 5,
            frames: 10,
            dim: 64,
            intra_object_sigma: 1.55,
            inter_object_spread: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.objects == 0 || self.sequences_per_object == 0 || self.frames == 0 || self.dim == 0 {
            return Err(HarnessError::Config("synthetic sizes must be positive".into()));
        }
        if !(self.intra_object_sigma > 0.0 && self.intra_object_sigma.is_finite()) {
            return Err(HarnessError::Config("intra_object_sigma must be positive".into()));
        }
        if !(self.inter_object_spread >= 0.0 && self.inter_object_spread.is_finite()) {
            return Err(HarnessError::Config("inter_object_spread must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset, HarnessError> {
    config.validate()?;
    let mut rng = ExperimentRng::seed_from_u64(config.seed);
    let spread = Normal::new(0.0, config.inter_object_spread).map_err(|e| HarnessError::Config(e.to_string()))?;
    let noise = Normal::new(0.0, config.intra_object_sigma).map_err(|e| HarnessError::Config(e.to_string()))?;
    let width = config.objects.saturating_sub(1).to_string().len().max(3);

    let mut sequences = Vec::with_capacity(config.objects * config.sequences_per_object);
    for o in 0..config.objects {
        let center: Vec<f64> = (0..config.dim).map(|_| spread.sample(&mut rng)).collect();
        let label = format!("obj{o:0width$}");
        for k in 0..config.sequences_per_object {
            let frames = (0..config.frames)
                .map(|_| {
                    let v = center.iter().map(|&c| (c + noise.sample(&mut rng)) as f32).collect();
                    Embedding::new(v).expect("finite gaussian sample")
                })
                .collect();
            sequences.push(SequenceSample::new(format!("{label}_seq{k}"), frames, Some(label.clone())));
        }
    }
    Ok(Dataset::new(config.dim, sequences)?)
}
