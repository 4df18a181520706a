//! Instance generators: the two adaptive hard families and seeded random instances.

mod negative;
mod positive;
mod random;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::allocation::{prefix_utilities, Allocation};
use crate::allocators::RunTrace;
use crate::error::Result;
use crate::instance::Instance;

pub use negative::{recurrence_residual, run_negative_adversary, s_sequence, NegativeAdversaryConfig};
pub use positive::{run_positive_adversary, PositiveAdversaryConfig, MIN_SUBSET};
pub use random::{random_instance, random_monopolist, Distribution};

/// Below this many agents the generators warn that the constructions are only asymptotic.
pub const LARGE_N: usize = 1 << 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Negative,
    Positive,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Negative => "negative",
            Self::Positive => "positive",
        })
    }
}

/// `k` agents from `pool` with the highest (or lowest) `score`, ties to the lower index.
pub(crate) fn top_agents(pool: &[usize], score: &[f64], k: usize, highest: bool) -> Vec<usize> {
    let mut order = pool.to_vec();
    order.sort_by(|&a, &b| {
        let c = score[a].total_cmp(&score[b]);
        let c = if highest { c.reverse() } else { c };
        c.then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialRun {
    pub family: Family,
    /// The items as they were emitted.
    pub instance: Instance,
    pub trace: RunTrace,
    /// `G_1..G_L` for the negative family, `[G]` for the positive one.
    pub good_groups: Vec<Vec<usize>>,
    /// `[B]` for the negative family, `B_1..B_L` for the positive one.
    pub bad_groups: Vec<Vec<usize>>,
    /// Number of items in the upper-triangular stage.
    pub upper_items: usize,
    /// Average allocated utility of the still-ungrouped agents after each round.
    pub ungrouped_average: Vec<f64>,
    /// The explicit allocation the lower-bound argument compares against.
    pub witness: Allocation,
}

impl AdversarialRun {
    /// Utility the opponent allocated during the first `t` items (no base).
    pub fn allocated_through(&self, t: usize) -> Result<Vec<f64>> {
        let zero = vec![0.0; self.instance.n()];
        Ok(prefix_utilities(&self.instance, &self.trace.allocation, &zero, t)?.into_inner())
    }

    pub fn group_average(values: &[f64], group: &[usize]) -> f64 {
        if group.is_empty() {
            return 0.0;
        }
        group.iter().map(|&a| values[a]).sum::<f64>() / group.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_agents_ties_by_index() {
        let score = [0.5, 0.7, 0.5, 0.7, 0.1];
        assert_eq!(top_agents(&[0, 1, 2, 3, 4], &score, 3, true), vec![1, 3, 0]);
        assert_eq!(top_agents(&[0, 1, 2, 3], &score, 1, false), vec![0]);
    }
}
