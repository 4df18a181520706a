//! Fractional allocations and utility accounting.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::instance::Instance;
use crate::welfare::UtilityVector;

/// Slack allowed on an item's column sum.
pub const COLUMN_TOL: f64 = 1e-12;

/// How one item is divided: `spread` is handed out evenly (each agent gets
/// `spread / n`), `targeted` lists extra per-agent fractions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemShares {
    pub spread: f64,
    pub targeted: Vec<(usize, f64)>,
}

impl ItemShares {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn uniform() -> Self {
        Self { spread: 1.0, targeted: Vec::new() }
    }

    pub fn whole(agent: usize) -> Self {
        Self { spread: 0.0, targeted: vec![(agent, 1.0)] }
    }

    /// Sorts by agent, merges duplicates and drops zero entries.
    pub fn normalized(mut self) -> Self {
        self.targeted.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.targeted.len());
        for (a, f) in self.targeted {
            match merged.last_mut() {
                Some(last) if last.0 == a => last.1 += f,
                _ => merged.push((a, f)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        self.targeted = merged;
        self
    }

    /// Both allocations scaled and combined: `wa * a + wb * b`.
    pub fn combine(a: &Self, wa: f64, b: &Self, wb: f64) -> Self {
        let mut targeted: Vec<_> = a.targeted.iter().map(|&(k, f)| (k, wa * f)).collect();
        targeted.extend(b.targeted.iter().map(|&(k, f)| (k, wb * f)));
        Self { spread: wa * a.spread + wb * b.spread, targeted }.normalized()
    }

    pub fn total(&self) -> f64 {
        self.spread + self.targeted.iter().map(|e| e.1).sum::<f64>()
    }

    pub fn fraction(&self, n: usize, agent: usize) -> f64 {
        let extra = match self.targeted.binary_search_by_key(&agent, |e| e.0) {
            Ok(i) => self.targeted[i].1,
            Err(_) => 0.0,
        };
        self.spread / n as f64 + extra
    }

    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut x = vec![self.spread / n as f64; n];
        for &(a, f) in &self.targeted {
            x[a] += f;
        }
        x
    }
}

/// `x[a][i]` for all agents and items, stored item by item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    n: usize,
    items: Vec<ItemShares>,
}

impl Allocation {
    pub fn new(n: usize, items: Vec<ItemShares>) -> Result<Self> {
        let items: Vec<_> = items.into_iter().map(ItemShares::normalized).collect();
        for (i, s) in items.iter().enumerate() {
            if !(s.spread >= 0.0) || s.targeted.iter().any(|e| !(e.1 >= 0.0) || !e.1.is_finite()) {
                return Err(invalid(format!("item {i} has a negative or non-finite fraction")));
            }
            if let Some(e) = s.targeted.iter().find(|e| e.0 >= n) {
                return Err(invalid(format!("item {i} assigns to agent {} but n = {n}", e.0)));
            }
            let total = s.total();
            if total > 1.0 + COLUMN_TOL {
                return Err(invalid(format!("item {i} is over-allocated: column sum {total}")));
            }
        }
        Ok(Self { n, items })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self { n, items: vec![ItemShares::empty(); m] }
    }

    pub fn from_dense(x: &[Vec<f64>]) -> Result<Self> {
        let n = x.len();
        let m = x.first().map_or(0, |r| r.len());
        if x.iter().any(|r| r.len() != m) {
            return Err(invalid("ragged allocation matrix"));
        }
        let items = (0..m)
            .map(|i| ItemShares {
                spread: 0.0,
                targeted: (0..n).filter(|&a| x[a][i] != 0.0).map(|a| (a, x[a][i])).collect(),
            })
            .collect();
        Self::new(n, items)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self) -> &[ItemShares] {
        &self.items
    }

    pub fn fraction(&self, agent: usize, item: usize) -> f64 {
        self.items[item].fraction(self.n, agent)
    }

    /// Writes `item,agent,fraction`, one row per nonzero entry.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["item", "agent", "fraction"])?;
        for (i, s) in self.items.iter().enumerate() {
            for (a, f) in s.dense(self.n).into_iter().enumerate() {
                if f != 0.0 {
                    w.serialize((i, a, f))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, n: usize, m: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut items = vec![ItemShares::empty(); m];
        for row in rdr.deserialize() {
            let (i, a, f): (usize, usize, f64) = row?;
            if i >= m || a >= n {
                return Err(invalid(format!("row ({i}, {a}) outside {n} agents x {m} items")));
            }
            items[i].targeted.push((a, f));
        }
        Self::new(n, items)
    }
}

fn check_dims(inst: &Instance, x: &Allocation, base: &[f64]) -> Result<()> {
    if x.n() != inst.n() || x.m() != inst.m() {
        return Err(invalid(format!(
            "allocation is {}x{}, instance is {}x{}",
            x.n(),
            x.m(),
            inst.n(),
            inst.m()
        )));
    }
    if base.len() != inst.n() {
        return Err(invalid(format!("{} base entries for {} agents", base.len(), inst.n())));
    }
    if base.iter().any(|b| !(*b >= 0.0)) {
        return Err(invalid("base utilities must be non-negative"));
    }
    Ok(())
}

/// Adds item `i`'s contribution under `shares` into `u`.
pub(crate) fn accrue(inst: &Instance, i: usize, shares: &ItemShares, u: &mut [f64]) {
    let item = &inst.items()[i];
    if shares.spread > 0.0 {
        let each = shares.spread / inst.n() as f64;
        for &(a, v) in item.entries() {
            u[a] += each * v;
        }
    }
    for &(a, f) in &shares.targeted {
        u[a] += f * item.value(a);
    }
}

/// `u[a] = base[a] + sum_i values[a][i] * x[a][i]`.
pub fn utilities_of(inst: &Instance, x: &Allocation, base: &[f64]) -> Result<UtilityVector> {
    prefix_utilities(inst, x, base, inst.m())
}

/// Utilities counting only the first `t` items.
pub fn prefix_utilities(inst: &Instance, x: &Allocation, base: &[f64], t: usize) -> Result<UtilityVector> {
    check_dims(inst, x, base)?;
    if t > inst.m() {
        return Err(invalid(format!("prefix length {t} exceeds item count {}", inst.m())));
    }
    let mut u = base.to_vec();
    for (i, shares) in x.items().iter().enumerate().take(t) {
        accrue(inst, i, shares, &mut u);
    }
    Ok(UtilityVector::new(u))
}

/// Utilities after every prefix, `t = 0..=m`, computed incrementally.
pub fn utility_path(inst: &Instance, x: &Allocation, base: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_dims(inst, x, base)?;
    let mut path = Vec::with_capacity(inst.m() + 1);
    let mut u = base.to_vec();
    path.push(u.clone());
    for (i, shares) in x.items().iter().enumerate() {
        accrue(inst, i, shares, &mut u);
        path.push(u.clone());
    }
    Ok(path)
}
