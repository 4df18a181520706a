use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::instance::{Instance, Item};

const MAX_ROW_DRAWS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distribution {
    /// Independent `U(0, 1)` values.
    Uniform,
    /// Each agent values `k` random items.
    Sparse(usize),
    /// A shared per-item quality times per-agent noise in `[0.5, 1.5)`.
    Correlated,
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "correlated" => Ok(Self::Correlated),
            _ => {
                let k = s
                    .strip_prefix("sparse(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| s.strip_prefix("sparse:"))
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| invalid(format!("unknown distribution {s:?}")))?;
                Ok(Self::Sparse(k))
            }
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => f.write_str("uniform"),
            Self::Sparse(k) => write!(f, "sparse({k})"),
            Self::Correlated => f.write_str("correlated"),
        }
    }
}

/// Seeded random instance; each agent's row is rescaled to sum to its `V_a`.
pub fn random_instance(
    n: usize,
    m: usize,
    seed: u64,
    dist: Distribution,
    monopolist: Option<Vec<f64>>,
) -> Result<Instance> {
    if n == 0 || m == 0 {
        return Err(invalid("random instances need n >= 1 and m >= 1"));
    }
    if let Distribution::Sparse(k) = dist {
        if k == 0 {
            return Err(invalid("sparse(k) needs k >= 1"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quality: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
    let mut rows = Vec::with_capacity(n);
    for a in 0..n {
        let target = monopolist.as_ref().map_or(1.0, |v| v[a]);
        let mut row = None;
        for _ in 0..MAX_ROW_DRAWS {
            let raw: Vec<f64> = match dist {
                Distribution::Uniform => (0..m).map(|_| rng.gen::<f64>()).collect(),
                Distribution::Sparse(k) => {
                    let mut r = vec![0.0; m];
                    for i in sample(&mut rng, m, k.min(m)) {
                        r[i] = rng.gen::<f64>();
                    }
                    r
                }
                Distribution::Correlated => quality.iter().map(|q| q * rng.gen_range(0.5..1.5)).collect(),
            };
            let total: f64 = raw.iter().sum();
            if total > 0.0 {
                row = Some(raw.into_iter().map(|x| x / total * target).collect::<Vec<f64>>());
                break;
            }
        }
        rows.push(row.ok_or_else(|| invalid(format!("agent {a} drew an all-zero row {MAX_ROW_DRAWS} times")))?);
    }
    let items = (0..m)
        .map(|i| Item::new(rows.iter().map(|r| r[i]).collect()))
        .collect::<Result<Vec<_>>>()?;
    Instance::new(n, items, monopolist)
}

/// Seeded monopolist utilities drawn uniformly from `[lo, hi]`.
pub fn random_monopolist(n: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<f64>> {
    if !(lo > 0.0 && lo <= hi) {
        return Err(invalid(format!("need 0 < lo <= hi, got [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| if lo == hi { lo } else { rng.gen_range(lo..=hi) }).collect())
}
