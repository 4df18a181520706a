//! Instances: agents, items in arrival order, and optional predicted monopolist utilities.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One arriving item. Only agents with a positive value are stored, in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    n: usize,
    entries: Vec<(usize, f64)>,
}

impl Item {
    /// Builds an item from its dense value vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((a, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(invalid(format!("item value {v} for agent {a} is negative or not finite")));
        }
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(a, v)| (a, *v))
            .collect();
        Ok(Self { n: values.len(), entries })
    }

    /// Builds an item from `(agent, value)` pairs; zero values are dropped.
    pub fn sparse(n: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(invalid(format!("agent {} listed twice", w[0].0)));
            }
        }
        for &(a, v) in &entries {
            if a >= n {
                return Err(invalid(format!("agent {a} out of range for n = {n}")));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!("item value {v} for agent {a} is negative or not finite")));
            }
        }
        entries.retain(|e| e.1 > 0.0);
        Ok(Self { n, entries })
    }

    /// Every agent in `agents` values the item at `value`.
    pub fn flat(n: usize, agents: &[usize], value: f64) -> Result<Self> {
        Self::sparse(n, agents.iter().map(|&a| (a, value)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn value(&self, agent: usize) -> f64 {
        match self.entries.binary_search_by_key(&agent, |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n];
        for &(a, v) in &self.entries {
            dense[a] = v;
        }
        dense
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The same item with every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut entries: Vec<_> = self.entries.iter().map(|&(a, v)| (a, v * c)).collect();
        entries.retain(|e| e.1 > 0.0);
        Self { n: self.n, entries }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "InstanceFile", try_from = "InstanceFile")]
pub struct Instance {
    n: usize,
    items: Vec<Item>,
    predicted_monopolist: Option<Vec<f64>>,
}

impl Instance {
    pub fn new(n: usize, items: Vec<Item>, predicted_monopolist: Option<Vec<f64>>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("instance needs at least one agent"));
        }
        if let Some((i, item)) = items.iter().enumerate().find(|(_, it)| it.n() != n) {
            return Err(invalid(format!("item {i} has {} values, expected {n}", item.n())));
        }
        if let Some(v) = &predicted_monopolist {
            if v.len() != n {
                return Err(invalid(format!("{} monopolist utilities for {n} agents", v.len())));
            }
            if v.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(invalid("monopolist utilities must be positive and finite"));
            }
        }
        Ok(Self { n, items, predicted_monopolist })
    }

    /// `n` agents, item `a` valued 1 by agent `a` only.
    pub fn identity(n: usize) -> Result<Self> {
        let items = (0..n)
            .map(|a| Item::sparse(n, vec![(a, 1.0)]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, items, None)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn predicted_monopolist(&self) -> Option<&[f64]> {
        self.predicted_monopolist.as_deref()
    }

    /// `V_a`, defaulting to 1.
    pub fn monopolist(&self, agent: usize) -> f64 {
        self.predicted_monopolist.as_ref().map_or(1.0, |v| v[agent])
    }

    pub fn monopolist_vec(&self) -> Vec<f64> {
        (0..self.n).map(|a| self.monopolist(a)).collect()
    }

    /// `max V / min V`.
    pub fn k_ratio(&self) -> f64 {
        let v = self.monopolist_vec();
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        hi / lo
    }

    /// Realized per-agent total value over all items.
    pub fn value_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for item in &self.items {
            for &(a, v) in item.entries() {
                sums[a] += v;
            }
        }
        sums
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let dto: InstanceFile = serde_json::from_str(s)?;
        dto.try_into()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&InstanceFile::from(self))?)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct ItemFile {
    values: Vec<f64>,
}

/// On-disk form with dense value rows.
#[derive(Clone, Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    #[serde(default)]
    predicted_monopolist: Option<Vec<f64>>,
    items: Vec<ItemFile>,
}

impl From<Instance> for InstanceFile {
    fn from(inst: Instance) -> Self {
        Self::from(&inst)
    }
}

impl From<&Instance> for InstanceFile {
    fn from(inst: &Instance) -> Self {
        Self {
            n: inst.n,
            predicted_monopolist: inst.predicted_monopolist.clone(),
            items: inst.items.iter().map(|it| ItemFile { values: it.values() }).collect(),
        }
    }
}

impl TryFrom<InstanceFile> for Instance {
    type Error = Error;

    fn try_from(f: InstanceFile) -> Result<Self> {
        let items = f
            .items
            .into_iter()
            .map(|it| Item::new(it.values))
            .collect::<Result<Vec<_>>>()?;
        Instance::new(f.n, items, f.predicted_monopolist)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentDeviation {
    pub agent: usize,
    pub expected: f64,
    pub realized: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub tol: f64,
    /// `|sum_i v_ai - V_a|` per agent.
    pub deviations: Vec<f64>,
    pub failing: Vec<AgentDeviation>,
    pub k: f64,
}

impl ValidationReport {
    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().copied().fold(0.0, f64::max)
    }
}

pub fn validate_instance(inst: &Instance, tol: f64) -> ValidationReport {
    let sums = inst.value_sums();
    let mut deviations = Vec::with_capacity(inst.n());
    let mut failing = Vec::new();
    for (a, &realized) in sums.iter().enumerate() {
        let expected = inst.monopolist(a);
        let deviation = (realized - expected).abs();
        if !(deviation <= tol) {
            failing.push(AgentDeviation { agent: a, expected, realized, deviation });
        }
        deviations.push(deviation);
    }
    ValidationReport {
        pass: failing.is_empty(),
        tol,
        deviations,
        failing,
        k: inst.k_ratio(),
    }
}
