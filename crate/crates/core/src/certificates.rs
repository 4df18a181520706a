//! Mechanical checks of the guarantees on concrete runs.

use serde::{Deserialize, Serialize};

use crate::allocation::{accrue, Allocation};
use crate::allocators::{AllocatorState, RunTrace};
use crate::error::{invalid, Result};
use crate::instance::Instance;
use crate::welfare::PMeanParam;

/// Default slack for identities that hold exactly.
pub const EXACT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    /// Bound used for the comparison (clipped where the quantity is a fraction).
    pub bound: f64,
    pub bound_unclipped: f64,
    pub tol: f64,
    pub worst_index: Option<usize>,
}

impl CertificateReport {
    /// Passes iff `measured <= bound + tol`.
    pub fn new(name: &str, measured: f64, bound: f64, tol: f64, worst_index: Option<usize>) -> Self {
        Self::clipped(name, measured, bound, bound, tol, worst_index)
    }

    fn clipped(name: &str, measured: f64, bound: f64, unclipped: f64, tol: f64, worst_index: Option<usize>) -> Self {
        Self {
            name: name.to_string(),
            pass: measured <= bound + tol,
            measured,
            bound,
            bound_unclipped: unclipped,
            tol,
            worst_index,
        }
    }
}

fn positive_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("primal-dual objectives need 0 < p <= 1, got {p}")))
    }
}

/// `P = (1/p) sum U_a^p`.
pub fn primal_objective(u: &[f64], p: f64) -> Result<f64> {
    positive_p(p)?;
    Ok(u.iter().map(|x| x.powf(p)).sum::<f64>() / p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualAssignment {
    /// `alpha(t)` integrated over each item.
    pub alphas: Vec<f64>,
    /// Smallest `alpha(t)` within each item.
    pub alpha_floors: Vec<f64>,
    pub gammas: Vec<f64>,
    pub p: f64,
}

impl DualAssignment {
    /// Duals whose integral and floor coincide, as produced by whole-item steps.
    pub fn pointwise(alphas: Vec<f64>, gammas: Vec<f64>, p: f64) -> Self {
        Self { alpha_floors: alphas.clone(), alphas, gammas, p }
    }

    pub fn from_state(state: &AllocatorState) -> Result<Self> {
        let gammas = state.gammas.clone().ok_or_else(|| invalid("state carries no dual variables"))?;
        let p = state.p.ok_or_else(|| invalid("state carries no exponent"))?;
        Ok(Self {
            alphas: state.alphas.iter().map(|d| d.paid).collect(),
            alpha_floors: state.alphas.iter().map(|d| d.floor).collect(),
            gammas,
            p,
        })
    }
}

/// `D = sum alpha + (1/p - 1) sum gamma_a^p`.
pub fn dual_objective(d: &DualAssignment) -> Result<f64> {
    positive_p(d.p)?;
    let tail = if d.p == 1.0 { 0.0 } else { (1.0 / d.p - 1.0) * d.gammas.iter().map(|g| g.powf(d.p)).sum::<f64>() };
    Ok(d.alphas.iter().sum::<f64>() + tail)
}

/// Every item price must cover `v_ai gamma_a^-(1-p)` for the final duals.
pub fn check_dual_feasibility(inst: &Instance, d: &DualAssignment, tol: f64) -> Result<CertificateReport> {
    positive_p(d.p)?;
    if d.alpha_floors.len() != inst.m() || d.gammas.len() != inst.n() {
        return Err(invalid(format!(
            "duals cover {} items and {} agents, instance has {} and {}",
            d.alpha_floors.len(),
            d.gammas.len(),
            inst.m(),
            inst.n()
        )));
    }
    let mut worst = 0.0;
    let mut worst_index = None;
    for (i, item) in inst.items().iter().enumerate() {
        for &(a, v) in item.entries() {
            let need = if d.p == 1.0 {
                v
            } else if d.gammas[a] <= 0.0 {
                f64::INFINITY
            } else {
                v * d.gammas[a].powf(-(1.0 - d.p))
            };
            let gap = need - d.alpha_floors[i];
            if gap > worst || (worst_index.is_none() && gap > tol) {
                worst = gap;
                worst_index = Some(i);
            }
        }
    }
    Ok(CertificateReport::new("dual_feasibility", worst, 0.0, tol, worst_index))
}

/// `Gamma^p P >= D`, reported as `measured = D <= bound = Gamma^p P`.
pub fn check_pd_ratio(primal: f64, dual: f64, gamma: f64, p: f64, tol: f64) -> CertificateReport {
    CertificateReport::new("pd_ratio", dual, gamma.powf(p) * primal, tol, None)
}

fn check_reference(inst: &Instance, trace: &RunTrace, reference: &Allocation) -> Result<()> {
    let (n, m) = (inst.n(), inst.m());
    if trace.allocation.n() != n || trace.allocation.m() != m || trace.initial_u.len() != n {
        return Err(invalid("trace does not belong to this instance"));
    }
    if reference.n() != n || reference.m() != m {
        return Err(invalid(format!(
            "reference is {}x{}, instance is {n}x{m}",
            reference.n(),
            reference.m()
        )));
    }
    Ok(())
}

/// `(1/n) sum_a U~_a(t) / U_a(t)` for every prefix length `t = 0..=m`.
pub fn fundamental_lemma_gaps(inst: &Instance, trace: &RunTrace, reference: &Allocation) -> Result<Vec<f64>> {
    check_reference(inst, trace, reference)?;
    let n = inst.n();
    let mut u = trace.initial_u.clone();
    let mut r = vec![0.0; n];
    let gap = |u: &[f64], r: &[f64]| -> f64 {
        u.iter()
            .zip(r)
            .map(|(u, r)| if *r == 0.0 { 0.0 } else { r / u })
            .sum::<f64>()
            / n as f64
    };
    let mut out = Vec::with_capacity(inst.m() + 1);
    out.push(gap(&u, &r));
    for i in 0..inst.m() {
        accrue(inst, i, &trace.allocation.items()[i], &mut u);
        accrue(inst, i, &reference.items()[i], &mut r);
        out.push(gap(&u, &r));
    }
    Ok(out)
}

/// The gap after the first `t` items.
pub fn fundamental_lemma_gap(inst: &Instance, trace: &RunTrace, reference: &Allocation, t: usize) -> Result<f64> {
    if t > inst.m() {
        return Err(invalid(format!("t = {t} exceeds item count {}", inst.m())));
    }
    Ok(fundamental_lemma_gaps(inst, trace, reference)?[t])
}

/// `log(n + 1)`.
pub fn fundamental_lemma_bound(n: usize) -> f64 {
    (n as f64 + 1.0).ln()
}

fn magnitude(p: PMeanParam) -> Result<f64> {
    p.negative_magnitude()
        .ok_or_else(|| invalid(format!("this bound needs p < 0, got {p}")))
}

/// `|p| / (|p| + 1)`, which is 1 for the egalitarian tag.
fn damped(p_abs: f64) -> f64 {
    if p_abs.is_infinite() {
        1.0
    } else {
        p_abs / (p_abs + 1.0)
    }
}

/// Fraction of agents with `u_a <= beta * opt` against `(beta log(n + 1))^(|p| / (|p| + 1))`.
pub fn count_bad_agents(u: &[f64], beta: f64, opt: f64, p: PMeanParam) -> Result<CertificateReport> {
    let p_abs = magnitude(p)?;
    let n = u.len();
    let threshold = beta * opt;
    let bad = u.iter().filter(|x| **x <= threshold).count();
    let bound = (beta * fundamental_lemma_bound(n)).powf(damped(p_abs));
    Ok(CertificateReport::clipped(
        "bad_agents",
        bad as f64 / n as f64,
        bound.min(1.0),
        bound,
        EXACT_TOL,
        None,
    ))
}

/// `(1/n) sum_{a bad} U*_a <= beta log(n + 1) opt`, at the end of a run.
pub fn check_bad_agent_opt_share(u: &[f64], u_star: &[f64], beta: f64, opt: f64) -> Result<CertificateReport> {
    if u.len() != u_star.len() {
        return Err(invalid("utility vectors differ in length"));
    }
    let n = u.len() as f64;
    let share = u
        .iter()
        .zip(u_star)
        .filter(|(x, _)| **x <= beta * opt)
        .map(|(_, s)| s)
        .sum::<f64>()
        / n;
    let bound = beta * fundamental_lemma_bound(u.len()) * opt;
    Ok(CertificateReport::new("bad_agent_opt_share", share, bound, EXACT_TOL * opt.max(1.0), None))
}

/// `beta* = 1/2 n^(-1/2 - 1/(2|p|)) log(n + 1)^(-1/2 + 1/(2|p|))`.
pub fn beta_star(n: usize, p: PMeanParam) -> Result<f64> {
    let p_abs = magnitude(p)?;
    let inv = if p_abs.is_infinite() { 0.0 } else { 1.0 / p_abs };
    let nf = n as f64;
    let log = (nf + 1.0).ln();
    Ok(0.5 * nf.powf(-0.5 - 0.5 * inv) * log.powf(-0.5 + 0.5 * inv))
}

/// Fraction of agents with `u_a + remaining_a / phi <= beta * opt` against
/// `max{(2 beta log(n + 1))^(|p| / (|p| + 1)), (2 phi beta)^|p|}`.
pub fn count_critical_agents(
    u: &[f64],
    remaining: &[f64],
    phi: f64,
    beta: f64,
    opt: f64,
    p: PMeanParam,
) -> Result<CertificateReport> {
    let p_abs = magnitude(p)?;
    if u.len() != remaining.len() {
        return Err(invalid("utility and remaining vectors differ in length"));
    }
    let n = u.len();
    let threshold = beta * opt;
    let critical = u
        .iter()
        .zip(remaining)
        .filter(|(u, r)| *u + *r / phi <= threshold)
        .count();
    let first = (2.0 * beta * fundamental_lemma_bound(n)).powf(damped(p_abs));
    let second = (2.0 * phi * beta).powf(p_abs);
    let bound = first.max(second);
    Ok(CertificateReport::clipped(
        "critical_agents",
        critical as f64 / n as f64,
        bound.min(1.0),
        bound,
        EXACT_TOL,
        None,
    ))
}

/// At `beta*` at most `sqrt(n log(n + 1))` agents are critical.
pub fn check_critical_count_at_beta_star(
    u: &[f64],
    remaining: &[f64],
    phi: f64,
    opt: f64,
    p: PMeanParam,
) -> Result<CertificateReport> {
    let n = u.len();
    let threshold = beta_star(n, p)? * opt;
    let critical = u
        .iter()
        .zip(remaining)
        .filter(|(u, r)| *u + *r / phi <= threshold)
        .count();
    let bound = (n as f64 * fundamental_lemma_bound(n)).sqrt();
    Ok(CertificateReport::new("critical_count_beta_star", critical as f64, bound, 0.0, None))
}

/// `min_a u_a >= (beta* / K) opt`, reported as `measured = threshold <= bound = min u`.
pub fn utility_floor_check(u: &[f64], opt: f64, p: PMeanParam, k: f64) -> Result<CertificateReport> {
    let threshold = beta_star(u.len(), p)? / k * opt;
    let (worst, low) = u
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (a, x)| if x < acc.1 { (a, x) } else { acc });
    Ok(CertificateReport::new("utility_floor", threshold, low, EXACT_TOL, Some(worst)))
}

/// `2 (K (n + 1))^|p| log(n + 1)` for relaxed Nashian greedy with `-1 <= p <= 0`.
pub fn nashian_ratio_bound(n: usize, p: PMeanParam, k: f64) -> Result<f64> {
    let p_abs = match p {
        PMeanParam::Nash => 0.0,
        other => magnitude(other)?,
    };
    Ok(2.0 * (k * (n as f64 + 1.0)).powf(p_abs) * fundamental_lemma_bound(n))
}

/// `((|p|/(|p|+1))^(1/|p|) (2K)^(-|p|/(|p|+1)))^(-1) sqrt(n log(n + 1))` for relaxed
/// Mixed Greedy with `p <= -1`.
pub fn mixed_ratio_bound(n: usize, p: PMeanParam, k: f64) -> Result<f64> {
    let p_abs = magnitude(p)?;
    let d = damped(p_abs);
    let lead = if p_abs.is_infinite() { 1.0 } else { d.powf(1.0 / p_abs) };
    let constant = lead * (2.0 * k).powf(-d);
    Ok((n as f64 * fundamental_lemma_bound(n)).sqrt() / constant)
}
