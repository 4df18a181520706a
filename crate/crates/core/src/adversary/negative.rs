use log::warn;
use serde::{Deserialize, Serialize};

use crate::allocation::{Allocation, ItemShares};
use crate::allocators::{Allocator, BaseMode, OnlineSession};
use crate::error::{invalid, Error, Result};
use crate::instance::Item;
use crate::welfare::PMeanParam;

use super::{top_agents, AdversarialRun, Family, LARGE_N};

/// `s_0 = 1 > s_1 > ... > s_L` solving `s_(l-1) + |p| (1 - s_l) = s_L (1 + |p|) - alpha`.
pub fn s_sequence(rounds: usize, alpha: f64, p_abs: f64) -> Result<Vec<f64>> {
    if rounds == 0 {
        return Err(invalid("the negative family needs L >= 1"));
    }
    if !(p_abs > 0.0 && p_abs.is_finite()) {
        return Err(invalid(format!("|p| = {p_abs} must be positive and finite")));
    }
    if !(0.0..p_abs).contains(&alpha) {
        return Err(invalid(format!("alpha = {alpha} must lie in [0, |p|) = [0, {p_abs})")));
    }
    let pow: Vec<f64> = (0..=rounds).map(|i| p_abs.powi(i as i32)).collect();
    let denom = 2.0 * pow[1..].iter().sum::<f64>() + 1.0;
    let c = (p_abs - alpha) / denom;
    Ok((0..=rounds)
        .map(|l| 1.0 - c * pow[rounds - l..rounds].iter().sum::<f64>())
        .collect())
}

/// Largest `|lhs - rhs|` of the defining recurrence.
pub fn recurrence_residual(s: &[f64], alpha: f64, p_abs: f64) -> f64 {
    let last = *s.last().expect("non-empty");
    (1..s.len())
        .map(|l| (s[l - 1] + p_abs * (1.0 - s[l]) - (last * (1.0 + p_abs) - alpha)).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeAdversaryConfig {
    pub n: usize,
    pub p_abs: f64,
    pub rounds: usize,
    pub alpha: f64,
    pub s: Vec<f64>,
    /// `N_l = round(n^{s_l})`: agents still ungrouped after round `l`.
    pub sizes: Vec<usize>,
}

impl NegativeAdversaryConfig {
    pub fn new(n: usize, p: PMeanParam, rounds: usize, alpha: f64) -> Result<Self> {
        let p_abs = match p {
            PMeanParam::Finite(q) if q < 0.0 => -q,
            _ => return Err(invalid(format!("the negative family needs a finite p < 0, got {p}"))),
        };
        let s = s_sequence(rounds, alpha, p_abs)?;
        if n < LARGE_N {
            warn!("negative family at n = {n}: the construction's inequalities are asymptotic");
        }
        let sizes: Vec<usize> = s.iter().map(|sl| ((n as f64).powf(*sl) + 0.5).floor() as usize).collect();
        for l in 1..=rounds {
            if sizes[l] >= sizes[l - 1] {
                return Err(Error::Config(format!(
                    "round {l}: rounded group sizes {} -> {} leave G_{l} empty at n = {n}",
                    sizes[l - 1],
                    sizes[l]
                )));
            }
        }
        if sizes[rounds] == 0 {
            return Err(Error::Config(format!("round {rounds}: bad group rounds to zero at n = {n}")));
        }
        Ok(Self { n, p_abs, rounds, alpha, s, sizes })
    }

    /// `log N_l / log n`.
    pub fn realized_s(&self) -> Vec<f64> {
        let ln = (self.n as f64).ln();
        self.sizes.iter().map(|&k| if self.n == 1 { 1.0 } else { (k as f64).ln() / ln }).collect()
    }

    fn slack(&self) -> f64 {
        (1.0 + self.rounds as f64 / (self.n as f64).powf(self.alpha)).powf(-1.0 / self.p_abs)
    }

    /// `(1 + L / n^alpha)^(-1/|p|) n^(1 - s_L) / (L + 1)` at the realized `s_L`.
    pub fn ratio_lower_bound(&self) -> f64 {
        let s_last = self.realized_s()[self.rounds];
        self.slack() * (self.n as f64).powf(1.0 - s_last) / (self.rounds as f64 + 1.0)
    }

    /// `(1 + L / n^alpha)^(-1/|p|) n^((1 - s_L (|p| + 1)) / |p|)` at the realized `s_L`.
    pub fn opt_lower_bound(&self) -> f64 {
        let s_last = self.realized_s()[self.rounds];
        self.slack() * (self.n as f64).powf((1.0 - s_last * (self.p_abs + 1.0)) / self.p_abs)
    }

    /// Upper bound on the bad group's average allocated utility against any opponent.
    pub fn bad_average_bound(&self) -> f64 {
        (self.rounds as f64 + 1.0) / self.n as f64
    }
}

/// Plays the negative family against `opponent`.
///
/// Round `l` offers `(N_(l-1) - N_l) / n` to every ungrouped agent; afterwards the
/// highest-utility ungrouped agents form `G_l`. The makeup stage then tops every
/// agent up to exactly one.
pub fn run_negative_adversary(
    cfg: &NegativeAdversaryConfig,
    opponent: &Allocator,
    base: BaseMode,
) -> Result<AdversarialRun> {
    let n = cfg.n;
    let nf = n as f64;
    let mut session = OnlineSession::new(opponent, n, base)?;
    let start = session.u().to_vec();
    let mut ungrouped: Vec<usize> = (0..n).collect();
    let mut good = Vec::with_capacity(cfg.rounds);
    let mut ungrouped_average = Vec::with_capacity(cfg.rounds);

    for l in 1..=cfg.rounds {
        let supply = (cfg.sizes[l - 1] - cfg.sizes[l]) as f64 / nf;
        session.feed(Item::flat(n, &ungrouped, supply)?)?;
        let gain: Vec<f64> = session.u().iter().zip(&start).map(|(u, s)| u - s).collect();
        let picked = top_agents(&ungrouped, &gain, cfg.sizes[l - 1] - cfg.sizes[l], true);
        let mut taken = vec![false; n];
        picked.iter().for_each(|&a| taken[a] = true);
        ungrouped.retain(|&a| !taken[a]);
        ungrouped_average.push(ungrouped.iter().map(|&a| gain[a]).sum::<f64>() / ungrouped.len() as f64);
        good.push(picked);
    }
    let upper_items = cfg.rounds;
    let bad = ungrouped;

    // Makeup: private top-ups by agent index, then one shared item for the bad group.
    let mut owners: Vec<(usize, usize)> = Vec::new();
    for (l, group) in good.iter().enumerate() {
        owners.extend(group.iter().map(|&a| (a, l + 1)));
    }
    owners.sort_unstable();
    for &(a, l) in &owners {
        session.feed(Item::flat(n, &[a], cfg.sizes[l] as f64 / nf)?)?;
    }
    session.feed(Item::flat(n, &bad, cfg.sizes[cfg.rounds] as f64 / nf)?)?;

    let (instance, trace) = session.finish()?;

    // Witness allocation: the bad group shares every round item and the shared
    // top-up evenly; good agents keep their private top-ups.
    let even: Vec<(usize, f64)> = bad.iter().map(|&a| (a, 1.0 / bad.len() as f64)).collect();
    let mut shares = Vec::with_capacity(instance.m());
    for _ in 0..upper_items {
        shares.push(ItemShares { spread: 0.0, targeted: even.clone() });
    }
    for &(a, _) in &owners {
        shares.push(ItemShares::whole(a));
    }
    shares.push(ItemShares { spread: 0.0, targeted: even });
    let witness = Allocation::new(n, shares)?;

    Ok(AdversarialRun {
        family: Family::Negative,
        instance,
        trace,
        good_groups: good,
        bad_groups: vec![bad],
        upper_items,
        ungrouped_average,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::utilities_of;
    use crate::instance::validate_instance;
    use crate::welfare::p_mean_welfare;

    #[test]
    fn s_examples() {
        let s = s_sequence(1, 0.0, 1.0).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15 && (s[1] - 2.0 / 3.0).abs() < 1e-15);
        let s = s_sequence(2, 0.0, 1.0).unwrap();
        for (a, b) in s.iter().zip([1.0, 0.8, 0.6]) {
            assert!((a - b).abs() < 1e-15);
        }
        for (l, alpha, q) in [(3, 0.2, 0.5), (7, 0.0, 2.0), (5, 1.0, 3.0), (10, 0.05, 1.0)] {
            let s = s_sequence(l, alpha, q).unwrap();
            assert!(recurrence_residual(&s, alpha, q) <= 1e-12);
            assert!(s.windows(2).all(|w| w[0] > w[1]));
            assert_eq!(s[0], 1.0);
        }
        assert!(s_sequence(2, 1.0, 1.0).is_err());
    }

    #[test]
    fn uniform_opponent_small() {
        let cfg = NegativeAdversaryConfig::new(100, PMeanParam::Finite(-1.0), 1, 0.0).unwrap();
        let run = run_negative_adversary(&cfg, &Allocator::Uniform, BaseMode::Physical).unwrap();
        assert!(validate_instance(&run.instance, 1e-9).pass);
        let u = run.trace.final_utilities();
        let bad = &run.bad_groups[0];
        let avg = bad.iter().map(|&a| u[a]).sum::<f64>() / bad.len() as f64;
        assert!(avg < 0.02, "{avg}");

        let w = utilities_of(&run.instance, &run.witness, &vec![0.0; 100]).unwrap();
        let welfare = p_mean_welfare(&w, PMeanParam::Finite(-1.0)).unwrap();
        assert!(welfare >= cfg.opt_lower_bound() * (1.0 - 1e-12));
    }

    #[test]
    fn too_small_n_names_round() {
        match NegativeAdversaryConfig::new(4, PMeanParam::Finite(-1.0), 6, 0.0) {
            Err(Error::Config(msg)) => assert!(msg.starts_with("round ")),
            other => panic!("{other:?}"),
        }
    }
}
