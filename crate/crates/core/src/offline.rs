//! Offline optimum: conditional gradient over the product of item simplices, and a
//! brute-force grid oracle for tiny instances.

use serde::{Deserialize, Serialize};

use crate::allocation::{utilities_of, Allocation, ItemShares};
use crate::allocators::power_waterfill;
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::welfare::{p_mean_welfare, PMeanParam, UtilityVector};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 5000;
/// Finite exponent standing in for the minimum.
pub const EGALITARIAN_SURROGATE: f64 = -64.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub allocation: Allocation,
    /// Welfare of `allocation`, a feasible value and so a lower bound on OPT.
    pub opt_value: f64,
    /// Upper bound on `OPT - opt_value`.
    pub certified_gap: f64,
    pub iterations: usize,
}

impl SolveResult {
    pub fn opt_lower(&self) -> f64 {
        self.opt_value
    }

    pub fn opt_upper(&self) -> f64 {
        self.opt_value + self.certified_gap
    }
}

/// `x^e` with integer fast paths.
#[inline]
fn pow(x: f64, e: f64, ei: Option<i32>) -> f64 {
    match ei {
        Some(0) => 1.0,
        Some(i) => x.powi(i),
        None => x.powf(e),
    }
}

fn int_exponent(e: f64) -> Option<i32> {
    (e.fract() == 0.0 && e.abs() < 128.0).then_some(e as i32)
}

/// Upper bound on `OPT / W` from the relative Frank-Wolfe gap `r`.
fn gap_ratio(p: f64, r: f64) -> f64 {
    if p == 0.0 {
        r.exp()
    } else if 1.0 + p * r > 0.0 {
        (1.0 + p * r).powf(1.0 / p)
    } else {
        f64::INFINITY
    }
}

struct Support {
    /// `(agent, value)` of every item, flattened.
    entries: Vec<(usize, f64)>,
    /// Item `i` owns `entries[starts[i]..starts[i + 1]]`.
    starts: Vec<usize>,
}

/// Utilities of the allocation `x` (fractions aligned with `support.entries`).
fn utilities(support: &Support, x: &[f64], n: usize) -> Vec<f64> {
    let mut u = vec![0.0; n];
    for (&(a, v), &f) in support.entries.iter().zip(x) {
        u[a] += v * f;
    }
    u
}

/// Re-splits every item optimally with the other items held fixed: a power water-fill
/// with `k = 1/(1-p)`, so each pass never lowers the objective.
fn block_sweep(support: &Support, x: &mut [f64], u: &mut Vec<f64>, n: usize, k: f64) {
    for i in 0..support.starts.len() - 1 {
        let (lo, hi) = (support.starts[i], support.starts[i + 1]);
        if lo == hi {
            continue;
        }
        let entries = &support.entries[lo..hi];
        for (j, &(a, v)) in (lo..hi).zip(entries) {
            u[a] = (u[a] - v * x[j]).max(0.0);
        }
        let fill = power_waterfill(entries, u, 1.0, k, 1.0);
        x[lo..hi].iter_mut().for_each(|f| *f = 0.0);
        for (a, f) in fill.shares {
            let j = lo + entries.partition_point(|e| e.0 < a);
            x[j] = f;
        }
        for (j, &(a, v)) in (lo..hi).zip(entries) {
            u[a] += v * x[j];
        }
    }
    *u = utilities(support, x, n);
}

/// Maximizes `sum_a F(U_a)` with `F' = U^(p-1)`, the monotone transform of the p-mean.
///
/// For `p < 1` the iterate moves by exact block sweeps; the Frank-Wolfe vertex only
/// supplies the stopping gap. `p` is the working exponent (0 for Nash). Returns the
/// fractions and iteration count together with the last relative gap
/// `r = sum_a w_a (U_s - U)/U / sum_a w_a`, `w_a = U_a^p`.
fn frank_wolfe(
    support: &Support,
    active: &[usize],
    n: usize,
    p: f64,
    tol: f64,
    max_iters: usize,
) -> (Vec<f64>, usize, f64) {
    let m = support.starts.len() - 1;
    let e = p - 1.0;
    let (ei, pi) = (int_exponent(e), int_exponent(p));
    let mut x = vec![1.0 / n as f64; support.entries.len()];
    let mut u = utilities(support, &x, n);
    let mut best = vec![0usize; m];
    let mut us = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut r = f64::INFINITY;
    let mut iters = 0;

    while iters < max_iters {
        // Gradient scaled by a positive constant; directions and line search are unaffected.
        let scale = active.iter().map(|&a| u[a]).fold(f64::INFINITY, f64::min);
        for &a in active {
            g[a] = pow(u[a] / scale, e, ei);
        }
        us.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let (lo, hi) = (support.starts[i], support.starts[i + 1]);
            if lo == hi {
                best[i] = usize::MAX;
                continue;
            }
            let mut arg = lo;
            let mut top = f64::NEG_INFINITY;
            for j in lo..hi {
                let (a, v) = support.entries[j];
                let s = v * g[a];
                if s > top {
                    top = s;
                    arg = j;
                }
            }
            best[i] = arg;
            let (a, v) = support.entries[arg];
            us[a] += v;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for &a in active {
            let w = pow(u[a] / scale, p, pi);
            num += w * (us[a] - u[a]) / u[a];
            den += w;
            d[a] = us[a] - u[a];
        }
        r = (num / den).max(0.0);
        if !(gap_ratio(p, r) - 1.0 > tol) {
            break;
        }
        iters += 1;
        if p < 1.0 {
            block_sweep(support, &mut x, &mut u, n, 1.0 / (1.0 - p));
            continue;
        }

        // Exact line search on the concave one-dimensional slice.
        let slope = |t: f64| -> f64 {
            active
                .iter()
                .filter(|&&a| d[a] != 0.0)
                .map(|&a| d[a] * pow((u[a] + t * d[a]) / scale, e, ei))
                .sum()
        };
        let step = if slope(1.0) >= 0.0 {
            1.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        if step <= 0.0 {
            break;
        }
        x.iter_mut().for_each(|xj| *xj *= 1.0 - step);
        for &j in best.iter().filter(|&&j| j != usize::MAX) {
            x[j] += step;
        }
        if iters % 64 == 0 {
            u = utilities(support, &x, n);
        } else {
            for &a in active {
                u[a] += step * d[a];
            }
        }
    }
    (x, iters, r)
}

/// Offline p-mean optimum by conditional gradient with exact line search.
///
/// Never fails on slow convergence; the returned gap is honest.
pub fn solve_opt(inst: &Instance, p: PMeanParam, tol: f64, max_iters: usize) -> Result<SolveResult> {
    let n = inst.n();
    let v = inst.value_sums();
    let active: Vec<usize> = (0..n).filter(|&a| v[a] > 0.0).collect();
    let nonpositive = !matches!(p, PMeanParam::Finite(q) if q > 0.0);
    if active.is_empty() || (nonpositive && active.len() < n) {
        return Ok(SolveResult {
            allocation: Allocation::zeros(n, inst.m()),
            opt_value: 0.0,
            certified_gap: 0.0,
            iterations: 0,
        });
    }

    let mut entries = Vec::new();
    let mut starts = vec![0];
    for item in inst.items() {
        entries.extend_from_slice(item.entries());
        starts.push(entries.len());
    }
    let support = Support { entries, starts };
    let working = match p {
        PMeanParam::Finite(q) => q,
        PMeanParam::Nash => 0.0,
        PMeanParam::NegInfinity => EGALITARIAN_SURROGATE,
    };
    let (x, iterations, r) = frank_wolfe(&support, &active, n, working, tol, max_iters);

    let shares = (0..inst.m())
        .map(|i| ItemShares {
            spread: 0.0,
            targeted: (support.starts[i]..support.starts[i + 1])
                .map(|j| (support.entries[j].0, x[j]))
                .collect(),
        })
        .collect();
    let allocation = Allocation::new(n, shares)?;
    let u = utilities_of(inst, &allocation, &vec![0.0; n])?;
    let opt_value = p_mean_welfare(&u, p)?;

    // Every agent alone can reach at most its full value.
    let cap = p_mean_welfare(&v, p)?;
    let ratio = gap_ratio(working, r);
    let upper = match p {
        PMeanParam::NegInfinity => {
            p_mean_welfare(&u, PMeanParam::Finite(EGALITARIAN_SURROGATE))? * ratio
        }
        _ => opt_value * ratio,
    };
    let certified_gap = (upper.min(cap) - opt_value).max(0.0);
    Ok(SolveResult { allocation, opt_value, certified_gap, iterations })
}

pub fn opt_utilities(result: &SolveResult, inst: &Instance) -> Result<UtilityVector> {
    utilities_of(inst, &result.allocation, &vec![0.0; inst.n()])
}

pub const BRUTE_FORCE_MAX_AGENTS: usize = 3;
pub const BRUTE_FORCE_MAX_ITEMS: usize = 3;

/// Monotone stand-in for the welfare that avoids roots and logs in the inner loop.
#[derive(Clone, Copy)]
enum Score {
    Min,
    Product,
    Sum,
    Sqrt,
    NegInverse,
    NegInverseSquare,
    Power(f64),
    NegPower(f64),
}

impl Score {
    fn of(p: PMeanParam) -> Self {
        match p {
            PMeanParam::NegInfinity => Self::Min,
            PMeanParam::Nash => Self::Product,
            PMeanParam::Finite(q) if q == 1.0 => Self::Sum,
            PMeanParam::Finite(q) if q == 0.5 => Self::Sqrt,
            PMeanParam::Finite(q) if q == -1.0 => Self::NegInverse,
            PMeanParam::Finite(q) if q == -2.0 => Self::NegInverseSquare,
            PMeanParam::Finite(q) if q > 0.0 => Self::Power(q),
            PMeanParam::Finite(q) => Self::NegPower(q),
        }
    }

    #[inline]
    fn eval(self, u: &[f64; 3], n: usize) -> f64 {
        let u = &u[..n];
        match self {
            Self::Min => u.iter().copied().fold(f64::INFINITY, f64::min),
            Self::Product => u.iter().product(),
            Self::Sum => u.iter().sum(),
            Self::Sqrt => u.iter().map(|x| x.sqrt()).sum(),
            Self::NegInverse => -u.iter().map(|x| 1.0 / x).sum::<f64>(),
            Self::NegInverseSquare => -u.iter().map(|x| 1.0 / (x * x)).sum::<f64>(),
            Self::Power(q) => u.iter().map(|x| x.powf(q)).sum(),
            Self::NegPower(q) => -u.iter().map(|x| x.powf(q)).sum::<f64>(),
        }
    }
}

/// Every way to split `steps` grid units among `n` agents.
fn compositions(n: usize, steps: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    match n {
        1 => out.push([steps, 0, 0]),
        2 => out.extend((0..=steps).map(|a| [a, steps - a, 0])),
        _ => {
            for a in 0..=steps {
                for b in 0..=steps - a {
                    out.push([a, b, steps - a - b]);
                }
            }
        }
    }
    out
}

/// Best welfare over allocations with every fraction on the grid `{0, step, ..., 1}`.
///
/// Only full allocations are enumerated: welfare is monotone, so leftover supply never helps.
pub fn brute_force_opt(inst: &Instance, p: PMeanParam, grid_step: f64) -> Result<f64> {
    let (n, m) = (inst.n(), inst.m());
    if n > BRUTE_FORCE_MAX_AGENTS || m > BRUTE_FORCE_MAX_ITEMS {
        return Err(Error::SizeLimit(format!(
            "brute force handles at most {BRUTE_FORCE_MAX_AGENTS} agents and {BRUTE_FORCE_MAX_ITEMS} items, got {n} x {m}"
        )));
    }
    let steps = (1.0 / grid_step).round();
    if !(grid_step > 0.0) || (steps * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("grid step {grid_step} does not divide 1")));
    }
    let steps = steps as usize;
    let comps = compositions(n, steps);
    // Utility contribution of each composition, per item.
    let gains: Vec<Vec<[f64; 3]>> = inst
        .items()
        .iter()
        .map(|item| {
            let v = item.values();
            comps
                .iter()
                .map(|c| {
                    let mut g = [0.0; 3];
                    for a in 0..n {
                        g[a] = v[a] * c[a] as f64 / steps as f64;
                    }
                    g
                })
                .collect()
        })
        .collect();

    let score = Score::of(p);
    let mut best_score = f64::NEG_INFINITY;
    let mut best_u = [0.0; 3];
    let mut consider = |u: [f64; 3]| {
        let s = score.eval(&u, n);
        if s > best_score {
            best_score = s;
            best_u = u;
        }
    };
    match m {
        0 => consider([0.0; 3]),
        1 => gains[0].iter().for_each(|g| consider(*g)),
        2 => {
            for g0 in &gains[0] {
                for g1 in &gains[1] {
                    consider([g0[0] + g1[0], g0[1] + g1[1], g0[2] + g1[2]]);
                }
            }
        }
        _ => {
            for g0 in &gains[0] {
                for g1 in &gains[1] {
                    let base = [g0[0] + g1[0], g0[1] + g1[1], g0[2] + g1[2]];
                    for g2 in &gains[2] {
                        consider([base[0] + g2[0], base[1] + g2[1], base[2] + g2[2]]);
                    }
                }
            }
        }
    }
    p_mean_welfare(&best_u[..n], p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Item;

    fn ps() -> Vec<PMeanParam> {
        vec![
            PMeanParam::Finite(-2.0),
            PMeanParam::Finite(-1.0),
            PMeanParam::Nash,
            PMeanParam::Finite(0.5),
            PMeanParam::Finite(1.0),
            PMeanParam::NegInfinity,
        ]
    }

    #[test]
    fn unvalued_item_is_skipped() {
        let items = vec![
            Item::new(vec![0.5, 0.5]).unwrap(),
            Item::new(vec![0.0, 0.0]).unwrap(),
            Item::new(vec![0.5, 0.5]).unwrap(),
        ];
        let inst = Instance::new(2, items, None).unwrap();
        let r = solve_opt(&inst, PMeanParam::Nash, 1e-9, 1000).unwrap();
        assert!((r.opt_value - 0.5).abs() < 1e-6);
    }

    #[test]
    fn identity_optimum_is_one() {
        let inst = Instance::identity(2).unwrap();
        for p in ps() {
            let r = solve_opt(&inst, p, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
            assert!((r.opt_value - 1.0).abs() < 1e-6, "{p}: {}", r.opt_value);
            assert!(r.certified_gap <= 1e-5);
            assert!((brute_force_opt(&inst, p, 0.5).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_item_egalitarian() {
        let inst = Instance::new(2, vec![Item::new(vec![1.0, 1.0]).unwrap()], None).unwrap();
        let r = solve_opt(&inst, PMeanParam::NegInfinity, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        assert!((r.opt_value - 0.5).abs() <= r.certified_gap + 1e-9);
        assert!(r.opt_value <= 0.5 + 1e-12);
        assert!((brute_force_opt(&inst, PMeanParam::NegInfinity, 0.05).unwrap() - 0.5).abs() < 1e-12);
    }

    /// Frozen oracle value for the two-item harmonic-mean fixture.
    #[test]
    fn harmonic_fixture() {
        let inst = Instance::new(
            2,
            vec![Item::new(vec![0.8, 0.4]).unwrap(), Item::new(vec![0.2, 0.6]).unwrap()],
            None,
        )
        .unwrap();
        let p = PMeanParam::Finite(-1.0);
        let oracle = brute_force_opt(&inst, p, 0.01).unwrap();
        assert!((oracle - 24.0 / 35.0).abs() < 1e-12, "{oracle}");
        let r = solve_opt(&inst, p, 1e-9, DEFAULT_MAX_ITERS).unwrap();
        assert!((r.opt_value - oracle).abs() < 1e-2);
        assert!(r.opt_value + r.certified_gap >= oracle - 1e-12);
    }

    #[test]
    fn oracle_limits() {
        let inst = Instance::identity(4).unwrap();
        assert!(matches!(brute_force_opt(&inst, PMeanParam::Nash, 0.5), Err(Error::SizeLimit(_))));
        let inst = Instance::identity(2).unwrap();
        assert!(brute_force_opt(&inst, PMeanParam::Nash, 0.3).is_err());
    }

    #[test]
    fn agent_without_value_zeroes_nonpositive_optimum() {
        let inst = Instance::new(2, vec![Item::new(vec![1.0, 0.0]).unwrap()], None).unwrap();
        let r = solve_opt(&inst, PMeanParam::Nash, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(r.opt_value, 0.0);
        let r = solve_opt(&inst, PMeanParam::Finite(1.0), DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        assert!((r.opt_value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn equal_valuations_give_equal_welfare() {
        let items = (0..3).map(|_| Item::new(vec![1.0 / 3.0; 3]).unwrap()).collect();
        let inst = Instance::new(3, items, None).unwrap();
        for p in ps() {
            let r = solve_opt(&inst, p, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
            assert!(r.opt_value <= 1.0 / 3.0 + 1e-12 && r.opt_upper() >= 1.0 / 3.0 - 1e-12, "{p}");
            assert!((r.opt_value - 1.0 / 3.0).abs() < 1e-3, "{p}: {}", r.opt_value);
        }
    }
}
