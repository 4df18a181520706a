//! Online allocators and the driver that feeds them an instance item by item.

mod egalitarian;
mod nashian;
mod primal_dual;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allocation::{Allocation, ItemShares};
use crate::error::{invalid, Error, Result};
use crate::instance::{validate_instance, Instance, Item};

pub use egalitarian::{egalitarian_shares, phi};
pub use nashian::{nashian_shares, power_waterfill, WaterLevel};
pub use primal_dual::{reg_gamma, reg_gamma_inverse, reg_initial_gamma};

/// Monopolist sums must match `V_a` this closely before a run is accepted.
pub const RUN_VALIDATION_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// Whole item to the instantaneous best agent.
    Atomic,
    /// Exact continuous greedy inside the item.
    Waterfill,
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "atomic" => Ok(Self::Atomic),
            "waterfill" => Ok(Self::Waterfill),
            _ => Err(invalid(format!("unknown granularity {s:?}"))),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Atomic => "atomic",
            Self::Waterfill => "waterfill",
        })
    }
}

/// Where the `V_a / n` head start comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseMode {
    /// Credited up front without allocating anything.
    Relaxed,
    /// No credit; utilities start at zero.
    Physical,
}

/// Dual price of one item.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPrice {
    /// `alpha(t)` integrated over the item.
    pub paid: f64,
    /// Smallest `alpha(t)` over the item; the value checked against the dual constraints.
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocatorState {
    pub n: usize,
    pub u: Vec<f64>,
    pub remaining: Vec<f64>,
    pub phi: Option<f64>,
    pub gammas: Option<Vec<f64>>,
    pub alphas: Vec<DualPrice>,
    pub p: Option<f64>,
}

impl AllocatorState {
    fn plain(u: Vec<f64>, remaining: Vec<f64>) -> Self {
        Self {
            n: u.len(),
            u,
            remaining,
            phi: None,
            gammas: None,
            alphas: Vec::new(),
            p: None,
        }
    }

    /// `U_a + remaining_a / phi`, or `None` if `phi` is unset.
    pub fn regularized(&self) -> Option<Vec<f64>> {
        let phi = self.phi?;
        Some(self.u.iter().zip(&self.remaining).map(|(u, r)| u + r / phi).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub shares: ItemShares,
    pub dual: Option<DualPrice>,
}

impl StepOutcome {
    pub fn fractions(&self, n: usize) -> Vec<f64> {
        self.shares.dense(n)
    }

    /// The dual price, for callers that only need the pointwise value.
    pub fn alpha(&self) -> Option<f64> {
        self.dual.map(|d| d.floor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Allocator {
    Uniform,
    Nashian { granularity: Granularity },
    Egalitarian { granularity: Granularity },
    Mixed { granularity: Granularity },
    PdGreedy { p: f64, granularity: Granularity },
    RegPd { p: f64, granularity: Granularity },
    Composed { inner: Box<Allocator>, uniform_share: f64 },
}

/// Gives `uniform_share` of every item evenly and the rest to `inner`.
pub fn compose_with_uniform(inner: Allocator, uniform_share: f64) -> Result<Allocator> {
    if !(0.0..=1.0).contains(&uniform_share) {
        return Err(Error::Config(format!("uniform share {uniform_share} outside [0, 1]")));
    }
    Ok(Allocator::Composed { inner: Box::new(inner), uniform_share })
}

fn check_pd_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("primal-dual allocators need 0 < p <= 1, got {p}")))
    }
}

impl Allocator {
    /// Parses the CLI id (`uniform | nashian | egalitarian | mixed | pd_greedy | reg_pd`).
    pub fn from_id(id: &str, granularity: Option<Granularity>, p: Option<f64>) -> Result<Self> {
        let g = granularity.unwrap_or(Granularity::Waterfill);
        let need_p = || p.ok_or_else(|| Error::Config(format!("{id} needs a finite positive p")));
        let alloc = match id {
            "uniform" => Self::Uniform,
            "nashian" => Self::Nashian { granularity: g },
            "egalitarian" => Self::Egalitarian { granularity: g },
            "mixed" => Self::Mixed { granularity: g },
            "pd_greedy" => Self::PdGreedy { p: need_p()?, granularity: g },
            "reg_pd" => Self::RegPd { p: need_p()?, granularity: g },
            _ => return Err(invalid(format!("unknown allocator {id:?}"))),
        };
        alloc.check()?;
        Ok(alloc)
    }

    pub fn id(&self) -> String {
        match self {
            Self::Uniform => "uniform".into(),
            Self::Nashian { .. } => "nashian".into(),
            Self::Egalitarian { .. } => "egalitarian".into(),
            Self::Mixed { .. } => "mixed".into(),
            Self::PdGreedy { .. } => "pd_greedy".into(),
            Self::RegPd { .. } => "reg_pd".into(),
            Self::Composed { inner, uniform_share } => format!("{}+uniform({uniform_share})", inner.id()),
        }
    }

    pub fn granularity(&self) -> Option<Granularity> {
        match self {
            Self::Uniform => None,
            Self::Nashian { granularity }
            | Self::Egalitarian { granularity }
            | Self::Mixed { granularity }
            | Self::PdGreedy { granularity, .. }
            | Self::RegPd { granularity, .. } => Some(*granularity),
            Self::Composed { inner, .. } => inner.granularity(),
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            Self::PdGreedy { p, .. } | Self::RegPd { p, .. } => check_pd_p(*p),
            Self::Composed { inner, uniform_share } => {
                if !(0.0..=1.0).contains(uniform_share) {
                    return Err(Error::Config(format!("uniform share {uniform_share} outside [0, 1]")));
                }
                inner.check()
            }
            _ => Ok(()),
        }
    }

    /// Starting state for `inst`.
    ///
    /// The primal-dual allocators set their own starting utilities and ignore `base`;
    /// so does the composer, which always starts from zero.
    pub fn init_state(&self, inst: &Instance, base: BaseMode) -> Result<AllocatorState> {
        self.init_state_for(&inst.monopolist_vec(), base)
    }

    /// Starting state for agents with monopolist utilities `v`, before any item is known.
    pub fn init_state_for(&self, v: &[f64], base: BaseMode) -> Result<AllocatorState> {
        self.check()?;
        let n = v.len();
        if n == 0 {
            return Err(invalid("allocator needs at least one agent"));
        }
        let v = v.to_vec();
        let head_start = |mode: BaseMode| match mode {
            BaseMode::Relaxed => v.iter().map(|x| x / n as f64).collect(),
            BaseMode::Physical => vec![0.0; n],
        };
        Ok(match self {
            Self::Uniform | Self::Nashian { .. } => AllocatorState::plain(head_start(base), v.clone()),
            Self::Egalitarian { .. } | Self::Mixed { .. } => {
                let mut s = AllocatorState::plain(head_start(base), v.clone());
                s.phi = Some(phi(n));
                s
            }
            Self::PdGreedy { p, .. } => {
                let mut s = AllocatorState::plain(vec![0.0; n], v.clone());
                s.gammas = Some(vec![0.0; n]);
                s.p = Some(*p);
                s
            }
            Self::RegPd { p, .. } => {
                let mut s = AllocatorState::plain(vec![1.0 / n as f64; n], v.clone());
                s.gammas = Some(vec![reg_initial_gamma(n); n]);
                s.p = Some(*p);
                s
            }
            Self::Composed { inner, .. } => inner.init_state_for(&v, BaseMode::Physical)?,
        })
    }

    /// Allocates one item and advances `state`, including `remaining`.
    pub fn step(&self, state: &mut AllocatorState, item: &Item) -> Result<StepOutcome> {
        if item.n() != state.n {
            return Err(invalid(format!("item has {} values, state has {} agents", item.n(), state.n)));
        }
        let (shares, dual) = self.allocate(state, item, 1.0)?;
        let shares = shares.normalized();
        for &(a, v) in item.entries() {
            state.remaining[a] = (state.remaining[a] - v).max(0.0);
        }
        if let Some(d) = dual {
            state.alphas.push(d);
        }
        Ok(StepOutcome { shares, dual })
    }

    /// Hands out `supply` of `item`, updating utilities and duals but not `remaining`.
    fn allocate(
        &self,
        state: &mut AllocatorState,
        item: &Item,
        supply: f64,
    ) -> Result<(ItemShares, Option<DualPrice>)> {
        let n = state.n;
        match self {
            Self::Uniform => {
                let shares = ItemShares { spread: supply, targeted: Vec::new() };
                apply(&mut state.u, item, &shares);
                Ok((shares, None))
            }
            Self::Nashian { granularity } => {
                let shares = nashian_shares(&state.u, item, supply, *granularity)?;
                apply(&mut state.u, item, &shares);
                Ok((shares, None))
            }
            Self::Egalitarian { granularity } => {
                let phi = state
                    .phi
                    .ok_or_else(|| Error::Config("egalitarian rule needs phi".into()))?;
                let shares = egalitarian_shares(&state.u, &state.remaining, phi, item, supply, *granularity);
                apply(&mut state.u, item, &shares);
                Ok((shares, None))
            }
            Self::Mixed { granularity } => {
                let phi = state
                    .phi
                    .ok_or_else(|| Error::Config("mixed greedy needs phi".into()))?;
                let half = supply / 2.0;
                let nash = nashian_shares(&state.u, item, half, *granularity)?;
                let egal = egalitarian_shares(&state.u, &state.remaining, phi, item, half, *granularity);
                let shares = ItemShares::combine(&nash, 1.0, &egal, 1.0);
                apply(&mut state.u, item, &shares);
                Ok((shares, None))
            }
            Self::PdGreedy { p, granularity } => {
                let (shares, dual) = primal_dual::pd_greedy_step(state, item, supply, *p, *granularity)?;
                Ok((shares, Some(dual)))
            }
            Self::RegPd { p, granularity } => {
                let (shares, dual) = primal_dual::reg_pd_step(state, item, supply, *p, *granularity)?;
                Ok((shares, Some(dual)))
            }
            Self::Composed { inner, uniform_share } => {
                let even = ItemShares { spread: supply * uniform_share, targeted: Vec::new() };
                let pre = state.u.clone();
                apply(&mut state.u, item, &even);
                let (rest, dual) = if *uniform_share < 1.0 {
                    inner.allocate(state, item, supply * (1.0 - uniform_share))?
                } else {
                    (ItemShares::empty(), None)
                };
                let shares = ItemShares::combine(&even, 1.0, &rest, 1.0);
                // Recompute from the pre-item utilities so the trace replays bit for bit.
                state.u = pre;
                apply(&mut state.u, item, &shares);
                if let (Some(g), Some(p)) = (state.gammas.as_mut(), state.p) {
                    refresh_gammas(self, g, &state.u, item, p, n);
                }
                Ok((shares, dual))
            }
        }
    }
}

fn refresh_gammas(alloc: &Allocator, gammas: &mut [f64], u: &[f64], item: &Item, p: f64, n: usize) {
    let mut inner = alloc;
    while let Allocator::Composed { inner: i, .. } = inner {
        inner = i;
    }
    for &(a, _) in item.entries() {
        gammas[a] = match inner {
            Allocator::RegPd { .. } => reg_gamma(u[a], n).max(gammas[a]),
            _ => (u[a] / p).max(gammas[a]),
        };
    }
}

/// `u[a] += fraction * value` for every agent valuing the item.
pub(crate) fn apply(u: &mut [f64], item: &Item, shares: &ItemShares) {
    if shares.spread > 0.0 {
        let each = shares.spread / u.len() as f64;
        for &(a, v) in item.entries() {
            u[a] += each * v;
        }
    }
    for &(a, f) in &shares.targeted {
        u[a] += f * item.value(a);
    }
}

/// Utilities and remaining monopolist utility just before an item arrives.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub u: Vec<f64>,
    pub remaining: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub allocator: String,
    pub initial_u: Vec<f64>,
    pub initial_remaining: Vec<f64>,
    pub allocation: Allocation,
    pub state: AllocatorState,
}

impl RunTrace {
    pub fn final_utilities(&self) -> &[f64] {
        &self.state.u
    }

    /// Snapshot before each item, then the final one: `m + 1` entries.
    pub fn path(&self, inst: &Instance) -> Vec<Snapshot> {
        let mut out = Vec::with_capacity(inst.m() + 1);
        let mut cur = Snapshot { u: self.initial_u.clone(), remaining: self.initial_remaining.clone() };
        for (item, shares) in inst.items().iter().zip(self.allocation.items()) {
            let mut next = cur.clone();
            apply(&mut next.u, item, shares);
            for &(a, v) in item.entries() {
                next.remaining[a] = (next.remaining[a] - v).max(0.0);
            }
            out.push(std::mem::replace(&mut cur, next));
        }
        out.push(cur);
        out
    }

    /// Snapshots before each item; one per item.
    pub fn snapshots(&self, inst: &Instance) -> Vec<Snapshot> {
        let mut path = self.path(inst);
        path.pop();
        path
    }
}

/// An allocator fed one item at a time, for callers that build the instance as they go.
pub struct OnlineSession<'a> {
    allocator: &'a Allocator,
    state: AllocatorState,
    initial_u: Vec<f64>,
    initial_remaining: Vec<f64>,
    items: Vec<Item>,
    shares: Vec<ItemShares>,
}

impl<'a> OnlineSession<'a> {
    /// Unit monopolist utilities for `n` agents.
    pub fn new(allocator: &'a Allocator, n: usize, base: BaseMode) -> Result<Self> {
        let state = allocator.init_state_for(&vec![1.0; n], base)?;
        Ok(Self {
            allocator,
            initial_u: state.u.clone(),
            initial_remaining: state.remaining.clone(),
            state,
            items: Vec::new(),
            shares: Vec::new(),
        })
    }

    pub fn feed(&mut self, item: Item) -> Result<StepOutcome> {
        let out = self.allocator.step(&mut self.state, &item)?;
        self.items.push(item);
        self.shares.push(out.shares.clone());
        Ok(out)
    }

    pub fn state(&self) -> &AllocatorState {
        &self.state
    }

    pub fn u(&self) -> &[f64] {
        &self.state.u
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    /// The realized instance and the trace of the session.
    pub fn finish(self) -> Result<(Instance, RunTrace)> {
        let n = self.state.n;
        let inst = Instance::new(n, self.items, None)?;
        let trace = RunTrace {
            allocator: self.allocator.id(),
            initial_u: self.initial_u,
            initial_remaining: self.initial_remaining,
            allocation: Allocation::new(n, self.shares)?,
            state: self.state,
        };
        Ok((inst, trace))
    }
}

/// Runs `allocator` over `inst` in arrival order. Refuses instances whose
/// monopolist sums are off by more than [`RUN_VALIDATION_TOL`].
pub fn run_online(allocator: &Allocator, inst: &Instance, base: BaseMode) -> Result<RunTrace> {
    let report = validate_instance(inst, RUN_VALIDATION_TOL);
    if !report.pass {
        return Err(Error::InvalidInstance(format!(
            "{} agents off their monopolist utility, worst deviation {:.3e}",
            report.failing.len(),
            report.max_deviation()
        )));
    }
    run_online_unchecked(allocator, inst, base)
}

pub fn run_online_unchecked(allocator: &Allocator, inst: &Instance, base: BaseMode) -> Result<RunTrace> {
    let mut state = allocator.init_state(inst, base)?;
    let initial_u = state.u.clone();
    let initial_remaining = state.remaining.clone();
    let mut shares = Vec::with_capacity(inst.m());
    for item in inst.items() {
        shares.push(allocator.step(&mut state, item)?.shares);
    }
    Ok(RunTrace {
        allocator: allocator.id(),
        initial_u,
        initial_remaining,
        allocation: Allocation::new(inst.n(), shares)?,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(u: &[f64]) -> AllocatorState {
        AllocatorState::plain(u.to_vec(), vec![1.0; u.len()])
    }

    fn item(v: &[f64]) -> Item {
        Item::new(v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_step() {
        let mut s = state(&[0.0]);
        let out = Allocator::Uniform.step(&mut s, &item(&[1.0])).unwrap();
        assert_eq!(out.fractions(1), vec![1.0]);
        let mut s = state(&[0.0; 4]);
        let out = Allocator::Uniform.step(&mut s, &item(&[0.1, 0.2, 0.3, 0.4])).unwrap();
        assert_eq!(out.fractions(4), vec![0.25; 4]);
    }

    #[test]
    fn uniform_run_gives_v_over_n() {
        let inst = Instance::identity(2).unwrap();
        let t = run_online(&Allocator::Uniform, &inst, BaseMode::Physical).unwrap();
        assert_eq!(t.final_utilities(), &[0.5, 0.5]);
        assert_eq!(t.snapshots(&inst).len(), 2);
    }

    #[test]
    fn relaxed_atomic_nashian_identity() {
        let inst = Instance::identity(2).unwrap();
        let alloc = Allocator::Nashian { granularity: Granularity::Atomic };
        let t = run_online(&alloc, &inst, BaseMode::Relaxed).unwrap();
        assert_eq!(t.final_utilities(), &[1.5, 1.5]);
        assert!(t.state.remaining.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn composer_extremes() {
        let inst = Instance::new(
            2,
            vec![item(&[0.6, 0.3]), item(&[0.4, 0.7])],
            None,
        )
        .unwrap();
        let full = compose_with_uniform(Allocator::Nashian { granularity: Granularity::Atomic }, 1.0).unwrap();
        let a = run_online(&full, &inst, BaseMode::Physical).unwrap();
        let b = run_online(&Allocator::Uniform, &inst, BaseMode::Physical).unwrap();
        assert_eq!(a.final_utilities(), b.final_utilities());

        let pd = Allocator::PdGreedy { p: 0.5, granularity: Granularity::Waterfill };
        let none = compose_with_uniform(pd.clone(), 0.0).unwrap();
        let a = run_online(&none, &inst, BaseMode::Physical).unwrap();
        let b = run_online(&pd, &inst, BaseMode::Physical).unwrap();
        for k in 0..2 {
            assert!((a.final_utilities()[k] - b.final_utilities()[k]).abs() < 1e-12);
        }
        assert!(compose_with_uniform(Allocator::Uniform, 1.5).is_err());
    }

    #[test]
    fn composer_half_identity() {
        let inst = Instance::identity(2).unwrap();
        let alloc = compose_with_uniform(Allocator::Nashian { granularity: Granularity::Atomic }, 0.5).unwrap();
        let t = run_online(&alloc, &inst, BaseMode::Physical).unwrap();
        assert_eq!(t.final_utilities(), &[0.75, 0.75]);
    }

    #[test]
    fn trace_replays_state() {
        let inst = Instance::new(
            3,
            vec![item(&[0.5, 0.2, 0.1]), item(&[0.3, 0.0, 0.6]), item(&[0.2, 0.8, 0.3])],
            None,
        )
        .unwrap();
        for alloc in [
            Allocator::Mixed { granularity: Granularity::Waterfill },
            Allocator::Nashian { granularity: Granularity::Waterfill },
            compose_with_uniform(Allocator::Mixed { granularity: Granularity::Atomic }, 0.5).unwrap(),
        ] {
            let t = run_online(&alloc, &inst, BaseMode::Relaxed).unwrap();
            let path = t.path(&inst);
            assert_eq!(path.len(), 4);
            assert_eq!(path[3].u, t.state.u);
            assert_eq!(path[3].remaining, t.state.remaining);
        }
    }

    #[test]
    fn refuses_invalid_instance() {
        let inst = Instance::new(2, vec![item(&[1.0, 0.9])], None).unwrap();
        assert!(matches!(
            run_online(&Allocator::Uniform, &inst, BaseMode::Relaxed),
            Err(Error::InvalidInstance(_))
        ));
        assert!(run_online_unchecked(&Allocator::Uniform, &inst, BaseMode::Relaxed).is_ok());
    }

    #[test]
    fn pd_requires_positive_p() {
        assert!(Allocator::from_id("pd_greedy", None, Some(0.0)).is_err());
        assert!(Allocator::from_id("reg_pd", None, Some(1.5)).is_err());
        assert!(Allocator::from_id("reg_pd", None, None).is_err());
        assert!(Allocator::from_id("bogus", None, None).is_err());
        assert!(Allocator::from_id("pd_greedy", None, Some(1.0)).is_ok());
    }
}
