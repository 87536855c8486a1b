use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// Uniformly random order.
    Random,
    /// Developmental order: a new object with probability `p_new`, otherwise
    /// a sequence of an object already shown.
    Devel,
}

fn default_p_new() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamPolicy {
    pub kind: StreamKind,
    #[serde(default = "default_p_new")]
    pub p_new: f64,
}

impl StreamPolicy {
    pub fn random() -> Self {
        Self { kind: StreamKind::Random, p_new: default_p_new() }
    }

    pub fn devel() -> Self {
        Self { kind: StreamKind::Devel, p_new: default_p_new() }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            StreamKind::Random => "random",
            StreamKind::Devel => "devel",
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.kind == StreamKind::Devel && !(self.p_new > 0.0 && self.p_new < 1.0) {
            return Err(HarnessError::Config(format!("devel p_new must lie in (0, 1), got {}", self.p_new)));
        }
        Ok(())
    }
}

/// Picks the next item of `pool`, returning its position. `pool` holds the
/// object key of every remaining sequence; `seen` the objects already shown.
///
/// Devel draws the coin only when both an unseen and a seen object are
/// available; otherwise it takes whichever side is non-empty. The unseen side
/// picks an object uniformly, then one of its sequences uniformly. The seen
/// side picks uniformly among the remaining sequences of seen objects.
pub fn next_sequence<R: Rng + ?Sized>(
    policy: &StreamPolicy,
    pool: &[&str],
    seen: &HashSet<&str>,
    rng: &mut R,
) -> Option<usize> {
    if pool.is_empty() {
        return None;
    }
    match policy.kind {
        StreamKind::Random => Some(rng.random_range(0..pool.len())),
        StreamKind::Devel => {
            let unseen: BTreeSet<&str> = pool.iter().copied().filter(|o| !seen.contains(o)).collect();
            let seen_positions: Vec<usize> = (0..pool.len()).filter(|&i| seen.contains(pool[i])).collect();
            let pick_new = match (unseen.is_empty(), seen_positions.is_empty()) {
                (false, false) => rng.random::<f64>() < policy.p_new,
                (false, true) => true,
                (true, _) => false,
            };
            if pick_new {
                let object = *unseen.iter().nth(rng.random_range(0..unseen.len()))?;
                let positions: Vec<usize> = (0..pool.len()).filter(|&i| pool[i] == object).collect();
                Some(positions[rng.random_range(0..positions.len())])
            } else {
                Some(seen_positions[rng.random_range(0..seen_positions.len())])
            }
        }
    }
}

/// Orders `items` (pairs of payload and object key) into a full stream.
pub fn stream_order<T: Copy, R: Rng + ?Sized>(policy: &StreamPolicy, items: &[(T, &str)], rng: &mut R) -> Vec<T> {
    let mut remaining: Vec<(T, &str)> = items.to_vec();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut out = Vec::with_capacity(items.len());
    loop {
        let keys: Vec<&str> = remaining.iter().map(|(_, k)| *k).collect();
        let Some(pos) = next_sequence(policy, &keys, &seen, rng) else {
            break;
        };
        let (item, key) = remaining.remove(pos);
        seen.insert(key);
        out.push(item);
    }
    out
}
