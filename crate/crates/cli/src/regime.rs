//! Regime rows of the summary table, each paired with an explicit-constant bound.

use std::fmt;

use pmean_core::certificates::{mixed_ratio_bound, nashian_ratio_bound};
use pmean_core::PMeanParam;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `p >= 1/log n`.
    Inverse,
    /// `|p| <= 1/log n`.
    Logarithmic,
    /// `-1 <= p < -1/log n`.
    Polynomial,
    /// `p < -1`.
    SquareRoot,
}

impl Regime {
    pub fn classify(n: usize, p: PMeanParam) -> Self {
        let threshold = 1.0 / (n as f64).ln();
        match p {
            PMeanParam::Nash => Self::Logarithmic,
            PMeanParam::NegInfinity => Self::SquareRoot,
            PMeanParam::Finite(q) if q >= threshold => Self::Inverse,
            PMeanParam::Finite(q) if q.abs() <= threshold => Self::Logarithmic,
            PMeanParam::Finite(q) if q >= -1.0 => Self::Polynomial,
            PMeanParam::Finite(_) => Self::SquareRoot,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Inverse => "1/p",
            Self::Logarithmic => "log n",
            Self::Polynomial => "n^(|p|/(|p|+1))",
            Self::SquareRoot => "sqrt(n)",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Ratio bound for `(n, p)` with unit monopolist utilities:
///
/// * `1/p` row: `1/p`;
/// * `log n` row: `log(n+1) + 1` for `p > 0`, else `2 (n+1)^|p| log(n+1)`;
/// * `n^(|p|/(|p|+1))` row: `2 (n+1)^|p| log(n+1)`;
/// * `sqrt(n)` row: the Mixed Greedy constant times `sqrt(n log(n+1))`.
pub fn regime_bound(n: usize, p: PMeanParam) -> f64 {
    let log = (n as f64 + 1.0).ln();
    match (Regime::classify(n, p), p) {
        (Regime::Inverse, PMeanParam::Finite(q)) => 1.0 / q,
        (Regime::Logarithmic, PMeanParam::Finite(q)) if q > 0.0 => log + 1.0,
        (Regime::Logarithmic | Regime::Polynomial, _) => {
            nashian_ratio_bound(n, p, 1.0).expect("exponent is non-positive in these rows")
        }
        (Regime::SquareRoot, _) => mixed_ratio_bound(n, p, 1.0).expect("exponent is negative in this row"),
        (Regime::Inverse, _) => unreachable!("only finite exponents classify as 1/p"),
    }
}
