use std::f64::consts::E;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::allocation::{Allocation, ItemShares};
use crate::allocators::{Allocator, BaseMode, OnlineSession};
use crate::error::{invalid, Error, Result};
use crate::instance::Item;

use super::{top_agents, AdversarialRun, Family, LARGE_N};

/// Smallest gadget size the construction supports.
pub const MIN_SUBSET: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositiveAdversaryConfig {
    pub n: usize,
    pub p: f64,
    /// Gadget size before rounding.
    pub m_derived: f64,
    /// Agents per subset.
    pub subset: usize,
    pub rounds: usize,
    /// `v_l = e^(-L-1+l)` for `l = 1..=L`.
    pub supplies: Vec<f64>,
}

fn derived_m(n: usize, p: f64) -> f64 {
    let ln = (n as f64).ln();
    let lnln = ln.ln();
    if p >= lnln / ln {
        1.0 / (4.0 * p)
    } else {
        ln / (4.0 * lnln)
    }
}

impl PositiveAdversaryConfig {
    /// Derives the gadget size from `(n, p)`; sizes below [`MIN_SUBSET`] are raised
    /// to it with a warning.
    pub fn new(n: usize, p: f64) -> Result<Self> {
        let m = derived_m(n, p);
        let subset = (m.ceil() as usize).max(MIN_SUBSET);
        if (m.ceil() as usize) < MIN_SUBSET {
            warn!("derived gadget size {m:.3} is below {MIN_SUBSET}; using {subset}");
        }
        Self::build(n, p, m, subset)
    }

    /// Explicit gadget size; sizes below [`MIN_SUBSET`] are refused.
    pub fn with_subset_size(n: usize, p: f64, subset: usize) -> Result<Self> {
        if subset < MIN_SUBSET {
            return Err(Error::Config(format!("gadget size {subset} is below {MIN_SUBSET}")));
        }
        Self::build(n, p, derived_m(n, p), subset)
    }

    fn build(n: usize, p: f64, m_derived: f64, subset: usize) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(invalid(format!("the positive family needs 0 < p <= 1, got {p}")));
        }
        if n < 3 {
            return Err(invalid("the positive family needs n >= 3"));
        }
        if n < 2 * subset {
            return Err(Error::Config(format!("n = {n} is below twice the gadget size {subset}")));
        }
        if p > 1.0 / 16.0 {
            warn!("positive family at p = {p} > 1/16");
        }
        if n < LARGE_N {
            warn!("positive family at n = {n}: the construction's inequalities are asymptotic");
        }
        let rounds = ((n as f64).ln() / 2.0).ceil().max(1.0) as usize;
        let supplies = (1..=rounds).map(|l| E.powi(l as i32 - rounds as i32 - 1)).collect();
        Ok(Self { n, p, m_derived, subset, rounds, supplies })
    }

    pub fn supply_total(&self) -> f64 {
        self.supplies.iter().sum()
    }

    /// `3 v_l / M`.
    pub fn bad_average_bound(&self, round: usize) -> f64 {
        3.0 * self.supplies[round - 1] / self.subset as f64
    }

    pub fn good_floor() -> f64 {
        (E - 2.0) / (E - 1.0)
    }
}

/// Plays the positive family against `opponent`.
///
/// Round `l` splits the ungrouped agents (by index) into subsets of `M` and offers
/// each subset an item of supply `v_l`; the lowest-utility member of every subset
/// then joins `B_l`. The makeup stage tops every agent up to exactly one.
pub fn run_positive_adversary(
    cfg: &PositiveAdversaryConfig,
    opponent: &Allocator,
    base: BaseMode,
) -> Result<AdversarialRun> {
    let n = cfg.n;
    let mut session = OnlineSession::new(opponent, n, base)?;
    let start = session.u().to_vec();
    let mut ungrouped: Vec<usize> = (0..n).collect();
    let mut bad_groups = Vec::with_capacity(cfg.rounds);
    let mut ungrouped_average = Vec::with_capacity(cfg.rounds);
    let mut round_subsets: Vec<Vec<Vec<usize>>> = Vec::with_capacity(cfg.rounds);

    for l in 1..=cfg.rounds {
        if ungrouped.is_empty() {
            return Err(Error::Config(format!("round {l}: no ungrouped agents left")));
        }
        let v = cfg.supplies[l - 1];
        let subsets: Vec<Vec<usize>> = ungrouped.chunks(cfg.subset).map(|c| c.to_vec()).collect();
        for s in &subsets {
            session.feed(Item::flat(n, s, v)?)?;
        }
        let gain: Vec<f64> = session.u().iter().zip(&start).map(|(u, s)| u - s).collect();
        let picked: Vec<usize> = subsets.iter().map(|s| top_agents(s, &gain, 1, false)[0]).collect();
        let mut taken = vec![false; n];
        picked.iter().for_each(|&a| taken[a] = true);
        ungrouped.retain(|&a| !taken[a]);
        ungrouped_average.push(if ungrouped.is_empty() {
            0.0
        } else {
            ungrouped.iter().map(|&a| gain[a]).sum::<f64>() / ungrouped.len() as f64
        });
        bad_groups.push(picked);
        round_subsets.push(subsets);
    }
    let upper_items = session.items().len();
    let good = ungrouped;
    let top_up = 1.0 - cfg.supply_total();

    for &a in &good {
        session.feed(Item::flat(n, &[a], top_up)?)?;
    }
    let mut all_bad: Vec<usize> = bad_groups.iter().flatten().copied().collect();
    all_bad.sort_unstable();
    session.feed(Item::flat(n, &all_bad, top_up)?)?;
    for l in 2..=cfg.rounds {
        let mut earlier: Vec<usize> = bad_groups[..l - 1].iter().flatten().copied().collect();
        earlier.sort_unstable();
        session.feed(Item::flat(n, &earlier, cfg.supplies[l - 1])?)?;
    }

    let (instance, trace) = session.finish()?;

    // Witness: each subset item goes to the subset's bad member, private top-ups to
    // their owners, and every shared makeup item evenly to the agents valuing it.
    let mut shares = Vec::with_capacity(instance.m());
    for (subsets, picked) in round_subsets.iter().zip(&bad_groups) {
        for (s, &b) in subsets.iter().zip(picked) {
            debug_assert!(s.contains(&b));
            shares.push(ItemShares::whole(b));
        }
    }
    for &a in &good {
        shares.push(ItemShares::whole(a));
    }
    for item in &instance.items()[shares.len()..] {
        let k = item.entries().len() as f64;
        shares.push(ItemShares { spread: 0.0, targeted: item.entries().iter().map(|&(a, _)| (a, 1.0 / k)).collect() });
    }
    let witness = Allocation::new(n, shares)?;

    Ok(AdversarialRun {
        family: Family::Positive,
        instance,
        trace,
        good_groups: vec![good],
        bad_groups,
        upper_items,
        ungrouped_average,
        witness,
    })
}
