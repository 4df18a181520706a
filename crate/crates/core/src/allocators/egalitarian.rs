use std::collections::HashMap;

use crate::allocation::ItemShares;
use crate::instance::Item;

use super::Granularity;

/// Regularizer scale `sqrt(n log(n + 1))`.
pub fn phi(n: usize) -> f64 {
    let n = n as f64;
    (n * (n + 1.0).ln()).sqrt()
}

/// Egalitarian share of `supply` of `item`: feed the positive-value agent(s) with the
/// smallest regularized utility `U_a + remaining_a / phi`.
///
/// While the item runs every valuing agent's remaining utility drains at rate `v_a`,
/// whatever `supply` is.
pub fn egalitarian_shares(
    u: &[f64],
    remaining: &[f64],
    phi: f64,
    item: &Item,
    supply: f64,
    granularity: Granularity,
) -> ItemShares {
    if item.is_empty() || supply <= 0.0 {
        return ItemShares::empty();
    }
    let targeted = match granularity {
        Granularity::Atomic => {
            let mut best = item.entries()[0].0;
            let mut best_r = u[best] + remaining[best] / phi;
            for &(a, _) in &item.entries()[1..] {
                let r = u[a] + remaining[a] / phi;
                if r < best_r {
                    best = a;
                    best_r = r;
                }
            }
            vec![(best, supply)]
        }
        Granularity::Waterfill => level_fill(u, remaining, phi, item.entries(), supply),
    };
    ItemShares { spread: 0.0, targeted }.normalized()
}

/// Agents of one item sharing a value. Members are sorted by starting regularized
/// utility; the first `joined` of them have merged into a block that moves as one.
struct Group {
    v: f64,
    members: Vec<(usize, f64)>,
    joined: usize,
    block: f64,
    active: bool,
}

impl Group {
    fn drift(&self, phi: f64) -> f64 {
        self.v / phi
    }

    /// Regularized utility of the first member still outside the block, at time `tau`.
    fn head(&self, tau: f64, phi: f64) -> Option<f64> {
        self.members.get(self.joined).map(|m| m.1 - self.drift(phi) * tau)
    }
}

/// Event-driven max-min leveling over unit time.
fn level_fill(u: &[f64], remaining: &[f64], phi: f64, entries: &[(usize, f64)], supply: f64) -> Vec<(usize, f64)> {
    let mut by_value: HashMap<u64, Vec<(usize, f64)>> = HashMap::new();
    for &(a, v) in entries {
        by_value.entry(v.to_bits()).or_default().push((a, u[a] + remaining[a] / phi));
    }
    let mut groups: Vec<Group> = by_value
        .into_iter()
        .map(|(bits, mut members)| {
            members.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            Group { v: f64::from_bits(bits), members, joined: 0, block: 0.0, active: false }
        })
        .collect();
    // Largest value first: these stay active longest as the level falls.
    groups.sort_by(|x, y| y.v.total_cmp(&x.v));

    let mut tau = 0.0;
    let mut guard = 4 * entries.len() + 16;
    loop {
        let mut level = f64::INFINITY;
        for g in &groups {
            if g.joined > 0 {
                level = level.min(g.block);
            }
            if let Some(h) = g.head(tau, phi) {
                level = level.min(h);
            }
        }
        let eps = 1e-13 * level.abs().max(1.0);
        for g in groups.iter_mut() {
            let at_level = g.joined > 0 && g.block <= level + eps;
            if g.joined == 0 || at_level {
                let mut grew = false;
                while let Some(h) = g.head(tau, phi) {
                    if h > level + eps {
                        break;
                    }
                    g.joined += 1;
                    grew = true;
                }
                if grew || at_level {
                    g.block = level;
                }
            }
            g.active = false;
        }

        // Level velocity c: agents at level receive c / v + 1 / phi of the supply,
        // adding groups by decreasing value while c stays above their breakpoint.
        let mut count = 0.0;
        let mut inv = 0.0;
        let mut c = f64::NEG_INFINITY;
        for g in groups.iter_mut() {
            if g.joined == 0 || g.block > level {
                continue;
            }
            if count > 0.0 && c <= -g.drift(phi) {
                break;
            }
            count += g.joined as f64;
            inv += g.joined as f64 / g.v;
            c = (supply - count / phi) / inv;
            g.active = true;
        }
        // Groups at the level but past the breakpoint fall behind the level.
        for g in groups.iter_mut() {
            if g.active && c <= -g.drift(phi) {
                g.active = false;
            }
        }

        let mut step = 1.0 - tau;
        for g in &groups {
            let closing = c + g.drift(phi);
            if closing <= 0.0 {
                continue;
            }
            let target = if g.joined > 0 && !g.active { Some(g.block) } else { g.head(tau, phi) };
            if let Some(r) = target {
                step = step.min(((r - level) / closing).max(0.0));
            }
        }

        tau += step;
        let new_level = level + c * step;
        for g in groups.iter_mut() {
            if g.joined == 0 {
                continue;
            }
            g.block = if g.active { new_level } else { g.block - g.drift(phi) * step };
        }
        guard -= 1;
        if tau >= 1.0 || guard == 0 {
            break;
        }
    }

    // Received fraction from the final block position: r_end = r0 + x v - v / phi.
    let mut out = Vec::new();
    for g in &groups {
        for &(a, r0) in &g.members[..g.joined] {
            let x = (g.block - r0) / g.v + 1.0 / phi;
            if x > 0.0 {
                out.push((a, x));
            }
        }
    }
    let total: f64 = out.iter().map(|e| e.1).sum();
    if total > supply {
        for e in out.iter_mut() {
            e.1 *= supply / total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(v: &[f64]) -> Item {
        Item::new(v.to_vec()).unwrap()
    }

    /// Tiny-step simulation of the same dynamics for cross-checking.
    fn sliced(u: &[f64], remaining: &[f64], phi: f64, it: &Item, supply: f64, slices: usize) -> Vec<f64> {
        let mut u = u.to_vec();
        let mut rem = remaining.to_vec();
        let mut x = vec![0.0; u.len()];
        let dt = 1.0 / slices as f64;
        for _ in 0..slices {
            let s = egalitarian_shares(&u, &rem, phi, it, supply * dt, Granularity::Atomic);
            for &(a, f) in &s.targeted {
                x[a] += f;
                u[a] += f * it.value(a);
            }
            for &(a, v) in it.entries() {
                rem[a] -= v * dt;
            }
        }
        x
    }

    #[test]
    fn atomic_examples() {
        // Regularized utilities (1.0, 0.9) with phi = 1 and zero remaining.
        let s = egalitarian_shares(&[1.0, 0.9], &[0.0, 0.0], 1.0, &item(&[0.5, 0.5]), 1.0, Granularity::Atomic);
        assert_eq!(s.dense(2), vec![0.0, 1.0]);
        let s = egalitarian_shares(&[1.0, 0.9], &[0.0, 0.0], 1.0, &item(&[0.5, 0.0]), 1.0, Granularity::Atomic);
        assert_eq!(s.dense(2), vec![1.0, 0.0]);
    }

    #[test]
    fn symmetric_waterfill_splits_evenly() {
        let s = egalitarian_shares(&[0.2; 3], &[1.0; 3], phi(3), &item(&[1.0, 1.0, 1.0]), 1.0, Granularity::Waterfill);
        for x in s.dense(3) {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn waterfill_matches_slicing() {
        let cases: &[(&[f64], &[f64], f64, &[f64], f64)] = &[
            (&[0.1, 0.3, 0.2, 0.05], &[0.9, 0.4, 0.7, 0.2], 2.0, &[0.3, 0.1, 0.0, 0.2], 1.0),
            (&[0.5, 0.5, 0.5], &[1.0, 1.0, 1.0], 30.0, &[0.2, 0.2, 0.6], 0.5),
            (&[0.25, 0.5], &[1.0, 1.0], 1.0, &[0.9, 0.1], 1.0),
            (&[0.3, 0.3, 0.3, 0.3], &[0.5, 0.6, 0.7, 0.8], 5.0, &[0.4, 0.4, 0.4, 0.1], 0.5),
        ];
        for &(u, rem, ph, v, supply) in cases {
            let it = item(v);
            let exact = egalitarian_shares(u, rem, ph, &it, supply, Granularity::Waterfill).dense(u.len());
            let approx = sliced(u, rem, ph, &it, supply, 20_000);
            let total: f64 = exact.iter().sum();
            assert!((total - supply).abs() < 1e-9, "{exact:?}");
            for (e, a) in exact.iter().zip(&approx) {
                assert!((e - a).abs() < 5e-3, "exact {exact:?} sliced {approx:?}");
            }
        }
    }

    #[test]
    fn zero_value_agents_receive_nothing() {
        let s = egalitarian_shares(&[0.0, 1.0], &[0.0, 0.5], 2.0, &item(&[0.0, 0.5]), 1.0, Granularity::Waterfill);
        assert_eq!(s.dense(2), vec![0.0, 1.0]);
    }
}
