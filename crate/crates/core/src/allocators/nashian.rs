use crate::allocation::ItemShares;
use crate::error::{Error, Result};
use crate::instance::Item;

use super::Granularity;

/// Result of a power water-fill: per-agent fractions and the final common priority.
#[derive(Clone, Debug, PartialEq)]
pub struct WaterLevel {
    pub shares: Vec<(usize, f64)>,
    /// Common priority `v_a * (U_a / coef)^(-1/k)` of every receiving agent at the end.
    pub level: f64,
}

/// Continuous greedy on priority `v_a * (U_a / coef)^(-1/k)`, handing out `supply`.
///
/// Receiving agents are raised to `U_a = coef * (v_a / level)^k` and share one
/// priority throughout. Agents join in decreasing order of their initial
/// priority; zero utility means infinite priority, so those agents start in.
pub fn power_waterfill(entries: &[(usize, f64)], u: &[f64], supply: f64, k: f64, coef: f64) -> WaterLevel {
    if entries.is_empty() || supply <= 0.0 {
        return WaterLevel { shares: Vec::new(), level: 0.0 };
    }
    // mu = level^(-k); an agent joins once mu passes its own mu0.
    let mut order: Vec<(usize, f64, f64)> = entries
        .iter()
        .map(|&(a, v)| (a, v, u[a] / (coef * v.powf(k))))
        .collect();
    order.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)));

    let mut sum_base = 0.0; // sum of U0 / v over the active set
    let mut sum_weight = 0.0; // sum of coef * v^(k-1)
    let mut active = 0;
    let mut mu = 0.0;
    while active < order.len() {
        let (a, v, _) = order[active];
        sum_base += u[a] / v;
        sum_weight += coef * v.powf(k - 1.0);
        active += 1;
        mu = (supply + sum_base) / sum_weight;
        if active < order.len() && order[active].2 >= mu {
            break;
        }
    }
    let shares = order[..active]
        .iter()
        .map(|&(a, v, _)| (a, (coef * v.powf(k - 1.0) * mu - u[a] / v).max(0.0)))
        .filter(|e| e.1 > 0.0)
        .collect();
    WaterLevel { shares, level: mu.powf(-1.0 / k) }
}

fn require_positive(u: &[f64], item: &Item) -> Result<()> {
    match item.entries().iter().find(|&&(a, _)| !(u[a] > 0.0)) {
        Some(&(a, _)) => Err(Error::Precondition(format!(
            "agent {a} values the item but has utility {}; nashian greedy needs positive utilities",
            u[a]
        ))),
        None => Ok(()),
    }
}

/// Nashian greedy share of `supply` of `item` given utilities `u`.
pub fn nashian_shares(u: &[f64], item: &Item, supply: f64, granularity: Granularity) -> Result<ItemShares> {
    require_positive(u, item)?;
    if item.is_empty() || supply <= 0.0 {
        return Ok(ItemShares::empty());
    }
    let targeted = match granularity {
        Granularity::Atomic => {
            let mut best = item.entries()[0];
            let mut best_ratio = best.1 / u[best.0];
            for &(a, v) in &item.entries()[1..] {
                let ratio = v / u[a];
                if ratio > best_ratio {
                    best = (a, v);
                    best_ratio = ratio;
                }
            }
            vec![(best.0, supply)]
        }
        Granularity::Waterfill => power_waterfill(item.entries(), u, supply, 1.0, 1.0).shares,
    };
    Ok(ItemShares { spread: 0.0, targeted }.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocators::apply;

    fn item(v: &[f64]) -> Item {
        Item::new(v.to_vec()).unwrap()
    }

    fn dense(s: &ItemShares, n: usize) -> Vec<f64> {
        s.dense(n)
    }

    #[test]
    fn atomic_examples() {
        let s = nashian_shares(&[0.5, 0.5], &item(&[1.0, 0.0]), 1.0, Granularity::Atomic).unwrap();
        assert_eq!(dense(&s, 2), vec![1.0, 0.0]);
        let s = nashian_shares(&[0.5, 1.0], &item(&[0.6, 1.0]), 1.0, Granularity::Atomic).unwrap();
        assert_eq!(dense(&s, 2), vec![1.0, 0.0]);
        let s = nashian_shares(&[0.5, 0.5], &item(&[0.3, 0.3]), 1.0, Granularity::Atomic).unwrap();
        assert_eq!(dense(&s, 2), vec![1.0, 0.0]);
    }

    #[test]
    fn zero_utility_is_refused() {
        let r = nashian_shares(&[0.0, 0.5], &item(&[0.2, 0.3]), 1.0, Granularity::Atomic);
        assert!(matches!(r, Err(Error::Precondition(_))));
        // An agent that does not value the item may sit at zero.
        assert!(nashian_shares(&[0.0, 0.5], &item(&[0.0, 0.3]), 1.0, Granularity::Waterfill).is_ok());
    }

    #[test]
    fn all_zero_item_is_discarded() {
        let s = nashian_shares(&[0.5, 0.5], &item(&[0.0, 0.0]), 1.0, Granularity::Waterfill).unwrap();
        assert_eq!(s.total(), 0.0);
    }

    #[test]
    fn waterfill_examples() {
        let s = nashian_shares(&[0.5, 0.5], &item(&[1.0, 1.0]), 1.0, Granularity::Waterfill).unwrap();
        assert_eq!(dense(&s, 2), vec![0.5, 0.5]);

        let it = item(&[1.0, 0.5]);
        let s = nashian_shares(&[0.5, 0.5], &it, 1.0, Granularity::Waterfill).unwrap();
        let x = dense(&s, 2);
        assert!((x[0] - 0.75).abs() < 1e-12 && (x[1] - 0.25).abs() < 1e-12);
        let mut u = vec![0.5, 0.5];
        apply(&mut u, &it, &s);
        assert!((u[0] - 1.25).abs() < 1e-12 && (u[1] - 0.625).abs() < 1e-12);
        assert!((1.0 / u[0] - 0.8).abs() < 1e-12 && (0.5 / u[1] - 0.8).abs() < 1e-12);

        let s = nashian_shares(&[0.5, 2.0], &item(&[0.1, 0.1]), 1.0, Granularity::Waterfill).unwrap();
        assert_eq!(dense(&s, 2), vec![1.0, 0.0]);
    }

    #[test]
    fn scaled_item_keeps_atomic_choice() {
        let u = [0.3, 0.7, 0.2];
        let it = item(&[0.2, 0.5, 0.1]);
        let a = nashian_shares(&u, &it, 1.0, Granularity::Atomic).unwrap();
        let b = nashian_shares(&u, &it.scaled(7.5), 1.0, Granularity::Atomic).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn power_waterfill_handles_zero_utilities() {
        // k = 2, coef = 0.5: both agents start at zero, so both are in from the start.
        let w = power_waterfill(&[(0, 1.0), (1, 0.5)], &[0.0, 0.0], 1.0, 2.0, 0.5);
        let total: f64 = w.shares.iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let u0 = w.shares[0].1 * 1.0;
        let u1 = w.shares[1].1 * 0.5;
        let p0 = 1.0 * (u0 / 0.5).powf(-0.5);
        let p1 = 0.5 * (u1 / 0.5).powf(-0.5);
        assert!((p0 - w.level).abs() < 1e-12 && (p1 - w.level).abs() < 1e-12);
    }
}
