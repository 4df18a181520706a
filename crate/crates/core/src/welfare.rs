//! The p-mean welfare functional over the extended exponent range.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// Exponents closer to zero than this are treated as the Nash (geometric mean) case.
pub const NASH_EPSILON: f64 = 1e-9;

/// Exponent of the p-mean welfare, `p` in `[-inf, 1]`.
///
/// The two limit cases are explicit tags so that `p = 0` (geometric mean) and
/// `p = -inf` (minimum) are evaluated exactly instead of through a huge or tiny float.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PMeanParam {
    Finite(f64),
    Nash,
    NegInfinity,
}

impl PMeanParam {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() {
            return Err(invalid("p is NaN"));
        }
        if p == f64::NEG_INFINITY {
            return Ok(Self::NegInfinity);
        }
        if p > 1.0 {
            return Err(invalid(format!("p = {p} exceeds 1")));
        }
        if p.abs() < NASH_EPSILON {
            return Ok(Self::Nash);
        }
        Ok(Self::Finite(p))
    }

    /// Numeric exponent, with `0` for Nash and `-inf` for the egalitarian tag.
    pub fn exponent(self) -> f64 {
        match self {
            Self::Finite(p) => p,
            Self::Nash => 0.0,
            Self::NegInfinity => f64::NEG_INFINITY,
        }
    }

    /// `|p|` for the negative regime; `None` when `p >= 0`.
    pub fn negative_magnitude(self) -> Option<f64> {
        match self {
            Self::Finite(p) if p < 0.0 => Some(-p),
            Self::NegInfinity => Some(f64::INFINITY),
            _ => None,
        }
    }

    pub fn is_negative(self) -> bool {
        self.negative_magnitude().is_some()
    }

    /// Finite positive exponent in `(0, 1]`, as required by the primal-dual programs.
    pub fn positive(self) -> Option<f64> {
        match self {
            Self::Finite(p) if p > 0.0 => Some(p),
            _ => None,
        }
    }
}

impl fmt::Display for PMeanParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(p) => write!(f, "{p}"),
            Self::Nash => f.write_str("nash"),
            Self::NegInfinity => f.write_str("-inf"),
        }
    }
}

impl FromStr for PMeanParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nash" => Ok(Self::Nash),
            "-inf" | "-infinity" | "neg_infinity" | "egalitarian" => Ok(Self::NegInfinity),
            other => {
                let p: f64 = other
                    .parse()
                    .map_err(|_| invalid(format!("cannot parse p from {s:?}")))?;
                Self::new(p)
            }
        }
    }
}

impl Serialize for PMeanParam {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PMeanParam {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-agent utilities, in units of the agent's monopolist utility.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UtilityVector(Vec<f64>);

impl UtilityVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Deref for UtilityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for UtilityVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// `((1/n) sum u^p)^(1/p)`, the geometric mean for Nash, and the minimum for `-inf`.
///
/// For `p <= 0` a zero entry gives welfare 0. Powers are taken relative to the
/// smallest (negative p) or largest (positive p) entry so that the sum never overflows.
pub fn p_mean_welfare(u: &[f64], p: PMeanParam) -> Result<f64> {
    if u.is_empty() {
        return Err(invalid("empty utility vector"));
    }
    if let Some(bad) = u.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(invalid(format!("utility entry {bad} is negative or not finite")));
    }
    let n = u.len() as f64;
    let lo = u.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = u.iter().copied().fold(0.0, f64::max);

    let w = match p {
        PMeanParam::NegInfinity => lo,
        PMeanParam::Nash => {
            if lo == 0.0 {
                0.0
            } else {
                (u.iter().map(|x| x.ln()).sum::<f64>() / n).exp()
            }
        }
        PMeanParam::Finite(p) if p < 0.0 => {
            if lo == 0.0 {
                0.0
            } else {
                let mean = u.iter().map(|x| (x / lo).powf(p)).sum::<f64>() / n;
                lo * mean.powf(1.0 / p)
            }
        }
        PMeanParam::Finite(p) => {
            if hi == 0.0 {
                0.0
            } else {
                let mean = u.iter().map(|x| (x / hi).powf(p)).sum::<f64>() / n;
                hi * mean.powf(1.0 / p)
            }
        }
    };
    Ok(w.clamp(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn welfare_examples() {
        let w = p_mean_welfare(&[0.5, 0.5, 0.5], PMeanParam::new(-2.0).unwrap()).unwrap();
        assert!(close(w, 0.5, 1e-15));
        let w = p_mean_welfare(&[1.0, 4.0], PMeanParam::new(-1.0).unwrap()).unwrap();
        assert!(close(w, 1.6, 1e-15));
        let w = p_mean_welfare(&[1.0, 4.0], PMeanParam::Nash).unwrap();
        assert!(close(w, 2.0, 1e-15));
        let w = p_mean_welfare(&[0.2, 0.8], PMeanParam::NegInfinity).unwrap();
        assert_eq!(w, 0.2);
    }

    #[test]
    fn welfare_errors() {
        assert!(matches!(
            p_mean_welfare(&[], PMeanParam::Nash),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            p_mean_welfare(&[0.1, -0.2], PMeanParam::Nash),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn zero_entry_convention() {
        let u = [0.0, 1.0];
        assert_eq!(p_mean_welfare(&u, PMeanParam::Nash).unwrap(), 0.0);
        assert_eq!(p_mean_welfare(&u, PMeanParam::new(-0.5).unwrap()).unwrap(), 0.0);
        let w = p_mean_welfare(&u, PMeanParam::new(0.5).unwrap()).unwrap();
        assert!(close(w, 0.25, 1e-15));
        assert_eq!(p_mean_welfare(&[0.0, 0.0], PMeanParam::new(1.0).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn large_negative_exponent_does_not_overflow() {
        let u = [1e-4, 2e-4, 0.5];
        let w = p_mean_welfare(&u, PMeanParam::new(-64.0).unwrap()).unwrap();
        assert!(w.is_finite() && w >= 1e-4 && w < 1.1e-4);
    }

    #[test]
    fn parse_and_normalize() {
        assert_eq!("nash".parse::<PMeanParam>().unwrap(), PMeanParam::Nash);
        assert_eq!("-inf".parse::<PMeanParam>().unwrap(), PMeanParam::NegInfinity);
        assert_eq!("0".parse::<PMeanParam>().unwrap(), PMeanParam::Nash);
        assert_eq!(PMeanParam::new(5e-10).unwrap(), PMeanParam::Nash);
        assert_eq!("-0.5".parse::<PMeanParam>().unwrap(), PMeanParam::Finite(-0.5));
        assert!("1.5".parse::<PMeanParam>().is_err());
        assert!("abc".parse::<PMeanParam>().is_err());
        let json = serde_json::to_string(&PMeanParam::NegInfinity).unwrap();
        assert_eq!(json, "\"-inf\"");
        let back: PMeanParam = serde_json::from_str(&json).unwrap();
        assert_eq!(back, PMeanParam::NegInfinity);
    }
}
