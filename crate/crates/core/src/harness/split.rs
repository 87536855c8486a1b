use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dataset::Dataset;

/// Partition of a dataset into held-out objects, interaction sequences and
/// one in-training evaluation sequence per remaining object. Indices refer to
/// `Dataset::sequences`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub heldout_objects: Vec<String>,
    /// Every sequence of the held-out objects.
    pub unsupervised: Vec<usize>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

pub fn make_split<R: Rng + ?Sized>(
    dataset: &Dataset,
    rng: &mut R,
    heldout_count: usize,
) -> Result<SplitPlan, HarnessError> {
    if let Some(s) = dataset.sequences.iter().find(|s| s.true_object.is_none()) {
        return Err(HarnessError::MissingLabel(s.sequence_id.clone()));
    }
    let by_object = dataset.by_object();
    if heldout_count >= by_object.len() {
        return Err(HarnessError::Split(format!(
            "{heldout_count} held-out objects requested but only {} objects exist",
            by_object.len()
        )));
    }
    if let Some((o, v)) = by_object.iter().find(|(_, v)| v.len() < 2) {
        return Err(HarnessError::Split(format!("object {o} has {} sequence(s), need 2", v.len())));
    }

    let mut objects: Vec<&str> = by_object.keys().copied().collect();
    objects.shuffle(rng);
    let mut heldout: Vec<&str> = objects[..heldout_count].to_vec();
    heldout.sort_unstable();

    let mut plan = SplitPlan {
        heldout_objects: heldout.iter().map(|s| s.to_string()).collect(),
        unsupervised: Vec::new(),
        train: Vec::new(),
        eval: Vec::new(),
    };
    for (object, indices) in &by_object {
        if heldout.binary_search(object).is_ok() {
            plan.unsupervised.extend(indices);
            continue;
        }
        let &eval = indices.choose(rng).expect("at least two sequences");
        plan.eval.push(eval);
        plan.train.extend(indices.iter().filter(|&&i| i != eval));
    }
    Ok(plan)
}
