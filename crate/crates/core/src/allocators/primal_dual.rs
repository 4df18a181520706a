use crate::allocation::ItemShares;
use crate::error::{Error, Result};
use crate::instance::Item;

use super::nashian::power_waterfill;
use super::{apply, AllocatorState, DualPrice, Granularity};

/// `gamma(U) = U (1 + log(1 + 1/n) - log U)`, increasing on `(0, 1 + 1/n]`.
pub fn reg_gamma(u: f64, n: usize) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    u * (1.0 + (1.0 / n as f64).ln_1p() - u.ln())
}

/// `gamma(1/n) = (log(n + 1) + 1) / n`.
pub fn reg_initial_gamma(n: usize) -> f64 {
    ((n as f64 + 1.0).ln() + 1.0) / n as f64
}

/// Inverse of [`reg_gamma`] on `(0, 1 + 1/n]`, by safeguarded Newton.
pub fn reg_gamma_inverse(y: f64, n: usize) -> f64 {
    let top = 1.0 + 1.0 / n as f64;
    if y >= top {
        return top;
    }
    if y <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, top);
    let mut x = y.min(top);
    for _ in 0..100 {
        let f = reg_gamma(x, n) - y;
        if f.abs() <= 1e-15 * y {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = (top / x).ln();
        let newton = x - f / slope;
        x = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-16 * top {
            break;
        }
    }
    x
}

fn priority(v: f64, gamma: f64, p: f64) -> f64 {
    if p == 1.0 {
        v
    } else if gamma <= 0.0 {
        f64::INFINITY
    } else {
        v * gamma.powf(-(1.0 - p))
    }
}

/// Argmax of priority; ties go to the larger value, then the lower index.
fn best_agent(item: &Item, gammas: &[f64], p: f64) -> (usize, f64) {
    let mut best = item.entries()[0];
    let mut best_pr = priority(best.1, gammas[best.0], p);
    for &(a, v) in &item.entries()[1..] {
        let pr = priority(v, gammas[a], p);
        if pr > best_pr || (pr == best_pr && v > best.1) {
            best = (a, v);
            best_pr = pr;
        }
    }
    (best.0, best_pr)
}

fn zero_dual() -> DualPrice {
    DualPrice { paid: 0.0, floor: 0.0 }
}

/// Greedy with `gamma_a = U_a / p`.
pub(super) fn pd_greedy_step(
    state: &mut AllocatorState,
    item: &Item,
    supply: f64,
    p: f64,
    granularity: Granularity,
) -> Result<(ItemShares, DualPrice)> {
    let gammas = state
        .gammas
        .as_mut()
        .ok_or_else(|| Error::Config("primal-dual state has no duals".into()))?;
    if item.is_empty() || supply <= 0.0 {
        return Ok((ItemShares::empty(), zero_dual()));
    }
    let atomic = granularity == Granularity::Atomic || p == 1.0;
    if atomic {
        let (winner, pr) = best_agent(item, gammas, p);
        let shares = ItemShares { spread: 0.0, targeted: vec![(winner, supply)] };
        apply(&mut state.u, item, &shares);
        gammas[winner] = gammas[winner].max(state.u[winner] / p);
        let alpha = if pr.is_finite() { pr } else { priority(item.value(winner), gammas[winner], p) };
        return Ok((shares, DualPrice { paid: alpha, floor: alpha }));
    }

    // Waterfill: U_a = p (v_a / level)^k with k = 1 / (1 - p).
    let k = 1.0 / (1.0 - p);
    let before: Vec<f64> = item.entries().iter().map(|&(a, _)| state.u[a]).collect();
    let w = power_waterfill(item.entries(), &state.u, supply, k, p);
    let shares = ItemShares { spread: 0.0, targeted: w.shares }.normalized();
    apply(&mut state.u, item, &shares);
    for &(a, _) in item.entries() {
        gammas[a] = gammas[a].max(state.u[a] / p);
    }
    // alpha dt summed over receivers is p^(1-p) U^(p-1) dU, which integrates in closed form.
    let gain: f64 = item
        .entries()
        .iter()
        .zip(&before)
        .map(|(&(a, _), &u0)| state.u[a].powf(p) - u0.powf(p))
        .sum();
    let paid = p.powf(1.0 - p) * gain / p / supply;
    Ok((shares, DualPrice { paid, floor: w.level }))
}

/// Five-point Gauss-Legendre on `panels` equal pieces.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const X: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let mid = a + (i as f64 + 0.5) * h;
        for (x, w) in X.iter().zip(W) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * total
}

/// Greedy with `gamma_a = gamma(U_a)`, starting every agent at `U = 1/n`.
pub(super) fn reg_pd_step(
    state: &mut AllocatorState,
    item: &Item,
    supply: f64,
    p: f64,
    granularity: Granularity,
) -> Result<(ItemShares, DualPrice)> {
    let n = state.n;
    let gammas = state
        .gammas
        .as_mut()
        .ok_or_else(|| Error::Config("primal-dual state has no duals".into()))?;
    if item.is_empty() || supply <= 0.0 {
        return Ok((ItemShares::empty(), zero_dual()));
    }
    if granularity == Granularity::Atomic || p == 1.0 {
        let mut best = item.entries()[0];
        let mut best_pr = priority(best.1, gammas[best.0], p);
        for &(a, v) in &item.entries()[1..] {
            let pr = priority(v, gammas[a], p);
            if pr > best_pr {
                best = (a, v);
                best_pr = pr;
            }
        }
        let shares = ItemShares { spread: 0.0, targeted: vec![(best.0, supply)] };
        apply(&mut state.u, item, &shares);
        gammas[best.0] = gammas[best.0].max(reg_gamma(state.u[best.0], n));
        return Ok((shares, DualPrice { paid: best_pr, floor: best_pr }));
    }

    let k = 1.0 / (1.0 - p);
    let u0: Vec<f64> = item.entries().iter().map(|&(a, _)| state.u[a]).collect();
    // Utility an agent reaches when the common priority is `level`.
    let reach = |level: f64, v: f64, start: f64| reg_gamma_inverse((v / level).powf(k), n).max(start);
    let delivered = |level: f64| -> f64 {
        item.entries()
            .iter()
            .zip(&u0)
            .map(|(&(_, v), &s)| (reach(level, v, s) - s) / v)
            .sum()
    };
    let mut hi = item
        .entries()
        .iter()
        .map(|&(a, v)| priority(v, gammas[a], p))
        .fold(0.0, f64::max);
    // Utilities are capped at 1 + 1/n, so the last item an agent values can only be
    // absorbed up to rounding.
    let top = 1.0 + 1.0 / n as f64;
    let capacity: f64 = item.entries().iter().zip(&u0).map(|(&(_, v), &s)| (top - s).max(0.0) / v).sum();
    if capacity < supply * (1.0 - super::RUN_VALIDATION_TOL) {
        return Err(Error::Precondition(format!(
            "regularized agents can absorb {capacity} of supply {supply}"
        )));
    }
    let target = supply.min(capacity);
    let mut lo = hi;
    while delivered(lo) < target {
        lo *= 0.5;
        if lo < 1e-300 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if delivered(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let level = lo;
    let mut targeted: Vec<(usize, f64)> = item
        .entries()
        .iter()
        .zip(&u0)
        .map(|(&(a, v), &s)| (a, (reach(level, v, s) - s) / v))
        .filter(|e| e.1 > 0.0)
        .collect();
    let total: f64 = targeted.iter().map(|e| e.1).sum();
    if total > 0.0 {
        for e in targeted.iter_mut() {
            e.1 *= supply / total;
        }
    }
    let shares = ItemShares { spread: 0.0, targeted }.normalized();
    apply(&mut state.u, item, &shares);
    let mut paid = 0.0;
    for (&(a, _), &s) in item.entries().iter().zip(&u0) {
        gammas[a] = gammas[a].max(reg_gamma(state.u[a], n));
        paid += integrate(|x| reg_gamma(x, n).powf(-(1.0 - p)), s, state.u[a], 8);
    }
    // Priorities only fall during the fill, so the smallest price is the largest
    // priority left at the end; this stays exact when an agent stops at the cap.
    let floor = item
        .entries()
        .iter()
        .map(|&(a, v)| priority(v, gammas[a], p))
        .fold(level, f64::max);
    Ok((shares, DualPrice { paid: paid / supply, floor }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocators::Allocator;

    fn item(v: &[f64]) -> Item {
        Item::new(v.to_vec()).unwrap()
    }

    fn pd_state(u: &[f64], p: f64) -> AllocatorState {
        let mut s = AllocatorState::plain(u.to_vec(), vec![1.0; u.len()]);
        s.gammas = Some(u.iter().map(|x| x / p).collect());
        s.p = Some(p);
        s
    }

    #[test]
    fn p_one_takes_max_value() {
        let mut s = pd_state(&[0.0, 0.0], 1.0);
        let (sh, d) = pd_greedy_step(&mut s, &item(&[0.3, 0.7]), 1.0, 1.0, Granularity::Waterfill).unwrap();
        assert_eq!(sh.dense(2), vec![0.0, 1.0]);
        assert_eq!(d.paid, 0.7);
    }

    #[test]
    fn half_power_atomic_priorities() {
        let mut s = pd_state(&[0.25, 1.0], 0.5);
        let (sh, d) = pd_greedy_step(&mut s, &item(&[1.0, 1.0]), 1.0, 0.5, Granularity::Atomic).unwrap();
        assert_eq!(sh.dense(2), vec![1.0, 0.0]);
        assert!((d.floor - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn first_item_value_tie_break() {
        let mut s = pd_state(&[0.0, 0.0], 0.5);
        let (sh, d) = pd_greedy_step(&mut s, &item(&[0.3, 0.7]), 1.0, 0.5, Granularity::Atomic).unwrap();
        assert_eq!(sh.dense(2), vec![0.0, 1.0]);
        assert!(d.floor.is_finite());
    }

    #[test]
    fn waterfill_dual_integral_matches_slicing() {
        let p = 0.25;
        let it = item(&[0.4, 0.3, 0.1]);
        let mut exact = pd_state(&[0.1, 0.02, 0.05], p);
        let (_, d) = pd_greedy_step(&mut exact, &it, 1.0, p, Granularity::Waterfill).unwrap();
        let mut sliced = pd_state(&[0.1, 0.02, 0.05], p);
        let slices = 50_000;
        let mut paid = 0.0;
        for _ in 0..slices {
            let (_, ds) =
                pd_greedy_step(&mut sliced, &it, 1.0 / slices as f64, p, Granularity::Atomic).unwrap();
            paid += ds.paid / slices as f64;
        }
        for a in 0..3 {
            assert!((exact.u[a] - sliced.u[a]).abs() < 1e-4);
        }
        // The sliced sum is a left Riemann sum of a decreasing price, so it sits above.
        assert!(paid >= d.paid - 1e-9 && (paid - d.paid) / d.paid < 2e-2, "{paid} vs {}", d.paid);
    }

    #[test]
    fn gamma_identities() {
        let g = reg_gamma(0.5, 2);
        assert!((g - 0.5 * (1.0 + 1.5f64.ln() - 0.5f64.ln())).abs() < 1e-15);
        assert!((g - reg_initial_gamma(2)).abs() < 1e-12);
        assert!((g - 1.049_306_144_334_054_9).abs() < 1e-12);
        let n = 4;
        assert!(reg_gamma(0.25, n) < reg_gamma(0.5, n) && reg_gamma(0.5, n) < reg_gamma(1.25, n));
        for &u in &[1e-6, 0.01, 0.25, 0.7, 1.2] {
            let back = reg_gamma_inverse(reg_gamma(u, n), n);
            assert!((back - u).abs() < 1e-12 * u.max(1e-3), "{u} -> {back}");
        }
    }

    #[test]
    fn reg_pd_symmetric_tie() {
        let alloc = Allocator::RegPd { p: 0.5, granularity: Granularity::Atomic };
        let inst = crate::instance::Instance::identity(2).unwrap();
        let mut s = alloc.init_state(&inst, crate::allocators::BaseMode::Relaxed).unwrap();
        let out = alloc.step(&mut s, &item(&[1.0, 1.0])).unwrap();
        assert_eq!(out.fractions(2), vec![1.0, 0.0]);
    }

    #[test]
    fn reg_pd_waterfill_equalizes_priorities() {
        let alloc = Allocator::RegPd { p: 0.5, granularity: Granularity::Waterfill };
        let inst = crate::instance::Instance::identity(3).unwrap();
        let mut s = alloc.init_state(&inst, crate::allocators::BaseMode::Relaxed).unwrap();
        let it = item(&[0.6, 0.3, 0.5]);
        let out = alloc.step(&mut s, &it).unwrap();
        let d = out.dual.unwrap();
        let g = s.gammas.as_ref().unwrap();
        for (a, x) in out.fractions(3).into_iter().enumerate() {
            let pr = it.value(a) * g[a].powf(-0.5);
            if x > 0.0 {
                assert!((pr - d.floor).abs() < 1e-9 * d.floor);
            } else {
                assert!(pr <= d.floor + 1e-12);
            }
        }
    }
}
