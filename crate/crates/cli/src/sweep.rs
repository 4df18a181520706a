//! Grids of runs over `(n, p, algo, instance)`.

use std::io::Write;

use anyhow::{bail, Result};
use pmean_core::adversary::{random_instance, Distribution, Family};
use pmean_core::allocators::Granularity;
use pmean_core::{Instance, PMeanParam};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::exec::{execute, AdversarySpec, RelaxedMode, Setup, Source};
use crate::report::RunReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Corpus {
    /// `n` agents, item `i` valued only by agent `i`.
    Identity,
    /// Seeded uniform instances with `2n` items.
    Random,
    /// The negative adversary with default rounds and `alpha = 0`.
    Negative,
    /// The positive adversary with the derived gadget size.
    Positive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub ps: Vec<PMeanParam>,
    pub ns: Vec<usize>,
    pub algos: Vec<String>,
    pub corpus: Corpus,
    /// Instances per `(n, p, algo)` cell; only random corpora use more than one.
    pub instances: usize,
    pub seed: u64,
    pub granularity: Option<Granularity>,
    pub relaxed: RelaxedMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub p: PMeanParam,
    pub algo: String,
    pub instance: usize,
    pub report: Option<RunReport>,
    pub error: Option<String>,
}

impl SweepSpec {
    pub fn check(&self) -> Result<()> {
        if self.ps.is_empty() || self.ns.is_empty() || self.algos.is_empty() {
            bail!("sweep grids must be non-empty (p: {}, n: {}, algo: {})", self.ps.len(), self.ns.len(), self.algos.len());
        }
        if self.instances == 0 {
            bail!("sweep needs at least one instance per cell");
        }
        Ok(())
    }

    fn instance_count(&self) -> usize {
        if self.corpus == Corpus::Random { self.instances } else { 1 }
    }

    fn source(&self, n: usize, k: usize) -> Result<Source> {
        Ok(match self.corpus {
            Corpus::Identity => Source::File { label: format!("identity:n={n}"), instance: Instance::identity(n)? },
            Corpus::Random => {
                let seed = self.seed.wrapping_add((n as u64) << 32).wrapping_add(k as u64);
                Source::File {
                    label: format!("random:n={n}:seed={seed}"),
                    instance: random_instance(n, 2 * n, seed, Distribution::Uniform, None)?,
                }
            }
            Corpus::Negative | Corpus::Positive => Source::Adversary(AdversarySpec {
                family: if self.corpus == Corpus::Negative { Family::Negative } else { Family::Positive },
                n,
                rounds: None,
                alpha: 0.0,
                subset: None,
            }),
        })
    }
}

fn sort_key(p: PMeanParam) -> f64 {
    p.exponent()
}

/// Runs every cell of the grid in parallel; rows that fail record their error.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.check()?;
    let mut cells = Vec::new();
    for &n in &spec.ns {
        for &p in &spec.ps {
            for algo in &spec.algos {
                for k in 0..spec.instance_count() {
                    cells.push((n, p, algo.clone(), k));
                }
            }
        }
    }
    let mut rows: Vec<SweepRow> = cells
        .into_par_iter()
        .map(|(n, p, algo, k)| {
            let setup = Setup::new(&algo, spec.granularity, spec.relaxed, p);
            let result = spec.source(n, k).and_then(|src| execute(&setup, src));
            let (report, error) = match result {
                Ok(exec) => (Some(exec.report), None),
                Err(e) => {
                    log::warn!("row n={n} p={p} {algo} #{k}: {e:#}");
                    (None, Some(format!("{e:#}")))
                }
            };
            SweepRow { n, p, algo, instance: k, report, error }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.n.cmp(&b.n)
            .then(sort_key(a.p).total_cmp(&sort_key(b.p)))
            .then(a.algo.cmp(&b.algo))
            .then(a.instance.cmp(&b.instance))
    });
    Ok(rows)
}

fn opt_str(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV line per row; wall time is left out so equal inputs give equal bytes.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n",
        "p",
        "algo",
        "instance",
        "source",
        "instance_hash",
        "alg_welfare",
        "opt_estimate",
        "certified_gap",
        "ratio",
        "regime",
        "regime_bound",
        "within_regime_bound",
        "certificates_pass",
        "error",
    ])?;
    for row in rows {
        let mut rec = vec![row.n.to_string(), row.p.to_string(), row.algo.clone(), row.instance.to_string()];
        match &row.report {
            Some(r) => rec.extend([
                r.source.clone(),
                r.instance_hash.clone(),
                r.alg_welfare.to_string(),
                r.opt_estimate.to_string(),
                r.certified_gap.to_string(),
                opt_str(r.ratio),
                r.regime.clone(),
                r.regime_bound.to_string(),
                r.within_regime_bound.map(|b| b.to_string()).unwrap_or_default(),
                r.certificates_pass.to_string(),
                String::new(),
            ]),
            None => {
                rec.extend(std::iter::repeat(String::new()).take(10));
                rec.push(row.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
