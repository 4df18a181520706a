//! Certificate suites per allocator family.

use anyhow::{bail, Result};
use pmean_core::allocators::{Allocator, Granularity, RunTrace};
use pmean_core::certificates::*;
use pmean_core::offline::{opt_utilities, SolveResult};
use pmean_core::{p_mean_welfare, Instance, PMeanParam};

use crate::exec::RelaxedMode;

/// Thresholds the bad- and critical-agent counts are evaluated at.
pub const BETA_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

pub struct SuiteInput<'a> {
    pub instance: &'a Instance,
    pub allocator: &'a Allocator,
    pub trace: &'a RunTrace,
    pub relaxed: RelaxedMode,
    pub p: PMeanParam,
    pub opt: &'a SolveResult,
}

fn worst(reports: Vec<CertificateReport>, name: &str) -> Option<CertificateReport> {
    reports
        .into_iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| (a.measured - a.bound).total_cmp(&(b.measured - b.bound)))
        .map(|(t, mut r)| {
            r.name = name.to_string();
            r.worst_index = r.worst_index.or(Some(t));
            r
        })
}

/// Runs every certificate that applies to the allocator family of the run.
pub fn certificate_suite(input: &SuiteInput) -> Result<Vec<CertificateReport>> {
    let inst = input.instance;
    if input.trace.allocation.n() != inst.n() || input.trace.allocation.m() != inst.m() {
        bail!("trace covers {}x{}, instance is {}x{}", input.trace.allocation.n(), input.trace.allocation.m(), inst.n(), inst.m());
    }
    match input.allocator {
        Allocator::PdGreedy { p, granularity } => primal_dual(input, *p, *granularity, 1.0 / p),
        Allocator::RegPd { p, granularity } => {
            primal_dual(input, *p, *granularity, (inst.n() as f64 + 1.0).ln() + 1.0)
        }
        Allocator::Nashian { .. } if input.relaxed == RelaxedMode::Assumed => nashian(input),
        Allocator::Mixed { .. } if input.relaxed == RelaxedMode::Assumed => mixed(input),
        _ => Ok(Vec::new()),
    }
}

fn primal_dual(input: &SuiteInput, p: f64, granularity: Granularity, gamma: f64) -> Result<Vec<CertificateReport>> {
    let inst = input.instance;
    let d = DualAssignment::from_state(&input.trace.state)?;
    let mut out = vec![check_dual_feasibility(inst, &d, EXACT_TOL)?];
    let primal = primal_objective(input.trace.final_utilities(), p)?;
    let dual = dual_objective(&d)?;
    // Whole-item steps satisfy feasibility but not the ratio condition.
    if granularity == Granularity::Waterfill || p == 1.0 {
        out.push(check_pd_ratio(primal, dual, gamma, p, EXACT_TOL * dual.max(1.0)));
    }
    let weak = (p / inst.n() as f64 * dual).powf(1.0 / p);
    out.push(CertificateReport::new(
        "weak_duality",
        input.opt.opt_value,
        weak + input.opt.certified_gap,
        EXACT_TOL,
        None,
    ));
    Ok(out)
}

fn alg_ratio(input: &SuiteInput) -> Result<f64> {
    let alg = p_mean_welfare(input.trace.final_utilities(), input.p)?;
    Ok(if alg > 0.0 { input.opt.opt_upper() / alg } else { f64::INFINITY })
}

fn nashian(input: &SuiteInput) -> Result<Vec<CertificateReport>> {
    let inst = input.instance;
    let n = inst.n();
    let mut out = Vec::new();
    let gaps = fundamental_lemma_gaps(inst, input.trace, &input.opt.allocation)?;
    let (t, gap) = gaps.iter().copied().enumerate().fold((0, 0.0), |a, (t, g)| if g > a.1 { (t, g) } else { a });
    out.push(CertificateReport::new("fundamental_lemma", gap, fundamental_lemma_bound(n), EXACT_TOL, Some(t)));

    let k = inst.k_ratio();
    let in_range = match input.p {
        PMeanParam::Nash => true,
        PMeanParam::Finite(q) => (-1.0..=0.0).contains(&q),
        PMeanParam::NegInfinity => false,
    };
    if in_range {
        out.push(CertificateReport::new("nashian_ratio", alg_ratio(input)?, nashian_ratio_bound(n, input.p, k)?, 0.0, None));
    }
    if input.p.is_negative() {
        let u = input.trace.final_utilities();
        let u_star = opt_utilities(input.opt, inst)?;
        let opt = input.opt.opt_lower();
        for beta in BETA_GRID {
            let mut r = count_bad_agents(u, beta, opt, input.p)?;
            r.name = format!("bad_agents@{beta:e}");
            out.push(r);
            let mut r = check_bad_agent_opt_share(u, &u_star, beta, opt)?;
            r.name = format!("bad_agent_opt_share@{beta:e}");
            out.push(r);
        }
    }
    Ok(out)
}

fn mixed(input: &SuiteInput) -> Result<Vec<CertificateReport>> {
    let inst = input.instance;
    let n = inst.n();
    let p = input.p;
    if !p.is_negative() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let k = inst.k_ratio();
    let opt = input.opt.opt_lower();
    let phi = input.trace.state.phi.unwrap_or_else(|| pmean_core::allocators::phi(n));
    let path = input.trace.path(inst);
    for beta in BETA_GRID {
        let reports = path
            .iter()
            .map(|s| count_critical_agents(&s.u, &s.remaining, phi, beta, opt, p))
            .collect::<pmean_core::Result<Vec<_>>>()?;
        out.extend(worst(reports, &format!("critical_agents@{beta:e}")));
    }
    let reports = path
        .iter()
        .map(|s| check_critical_count_at_beta_star(&s.u, &s.remaining, phi, opt, p))
        .collect::<pmean_core::Result<Vec<_>>>()?;
    out.extend(worst(reports, "critical_count_beta_star"));
    out.push(utility_floor_check(input.trace.final_utilities(), opt, p, k)?);
    if p.negative_magnitude().is_some_and(|m| m >= 1.0) {
        out.push(CertificateReport::new("mixed_ratio", alg_ratio(input)?, mixed_ratio_bound(n, p, k)?, 0.0, None));
    }
    Ok(out)
}
