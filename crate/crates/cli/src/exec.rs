//! Building allocators and running them on files or adversaries.

use std::fmt;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use pmean_core::adversary::{
    run_negative_adversary, run_positive_adversary, AdversarialRun, Family, NegativeAdversaryConfig,
    PositiveAdversaryConfig,
};
use pmean_core::allocators::{
    compose_with_uniform, run_online, run_online_unchecked, Allocator, BaseMode, Granularity, RUN_VALIDATION_TOL,
};
use pmean_core::certificates::CertificateReport;
use pmean_core::offline::{solve_opt, SolveResult, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use pmean_core::{p_mean_welfare, utilities_of, validate_instance, Instance, PMeanParam};
use serde::{Deserialize, Serialize};

use crate::regime::{regime_bound, Regime};
use crate::report::{instance_hash, RunArtifact, RunReport, SCHEMA_VERSION};
use crate::suite::{certificate_suite, SuiteInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RelaxedMode {
    /// Credit `V_a / n` up front without allocating it.
    Assumed,
    /// Give half of every item away uniformly instead.
    Physical,
}

impl fmt::Display for RelaxedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Assumed => "assumed",
            Self::Physical => "physical",
        })
    }
}

/// The allocator for `id` and the base it runs from.
///
/// Physical runs wrap the greedy allocators in a uniform composer at `uniform_share`
/// (default one half); uniform and the primal-dual allocators run unchanged.
pub fn build_allocator(
    id: &str,
    granularity: Option<Granularity>,
    relaxed: RelaxedMode,
    p: PMeanParam,
    uniform_share: Option<f64>,
) -> Result<(Allocator, BaseMode)> {
    let pd = matches!(id, "pd_greedy" | "reg_pd");
    let pd_p = if pd {
        Some(p.positive().filter(|q| *q <= 1.0).ok_or_else(|| anyhow!("{id} needs 0 < p <= 1, got p = {p}"))?)
    } else {
        None
    };
    let alloc = Allocator::from_id(id, granularity, pd_p)?;
    Ok(match relaxed {
        RelaxedMode::Assumed => (alloc, BaseMode::Relaxed),
        RelaxedMode::Physical if pd || alloc == Allocator::Uniform => (alloc, BaseMode::Physical),
        RelaxedMode::Physical => (compose_with_uniform(alloc, uniform_share.unwrap_or(0.5))?, BaseMode::Physical),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub family: Family,
    pub n: usize,
    /// Rounds `L`; the negative family defaults to `ceil(log n)`.
    pub rounds: Option<usize>,
    pub alpha: f64,
    /// Gadget size for the positive family; derived when absent.
    pub subset: Option<usize>,
}

pub fn parse_family(s: &str) -> Result<Family> {
    match s {
        "negative" => Ok(Family::Negative),
        "positive" => Ok(Family::Positive),
        _ => bail!("unknown adversary family {s:?}"),
    }
}

pub enum Source {
    File { label: String, instance: Instance },
    Adversary(AdversarySpec),
}

pub struct Setup {
    pub algo: String,
    pub granularity: Option<Granularity>,
    pub relaxed: RelaxedMode,
    pub p: PMeanParam,
    pub uniform_share: Option<f64>,
    pub allow_invalid: bool,
    pub tol: f64,
    pub max_iters: usize,
}

impl Setup {
    pub fn new(algo: &str, granularity: Option<Granularity>, relaxed: RelaxedMode, p: PMeanParam) -> Self {
        Self {
            algo: algo.to_string(),
            granularity,
            relaxed,
            p,
            uniform_share: None,
            allow_invalid: false,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

pub struct Execution {
    pub report: RunReport,
    pub artifact: RunArtifact,
    pub instance: Instance,
    pub opt: SolveResult,
    pub adversarial: Option<AdversarialRun>,
}

fn play(spec: &AdversarySpec, alloc: &Allocator, base: BaseMode, p: PMeanParam) -> Result<(AdversarialRun, Vec<CertificateReport>)> {
    let n = spec.n;
    match spec.family {
        Family::Negative => {
            let rounds = spec.rounds.unwrap_or_else(|| ((n as f64).ln().ceil() as usize).max(1));
            let cfg = NegativeAdversaryConfig::new(n, p, rounds, spec.alpha)?;
            let run = run_negative_adversary(&cfg, alloc, base)?;
            let allocated = run.allocated_through(run.upper_items)?;
            let bad = AdversarialRun::group_average(&allocated, &run.bad_groups[0]);
            let witness = p_mean_welfare(&utilities_of(&run.instance, &run.witness, &vec![0.0; n])?, p)?;
            let checks = vec![
                CertificateReport::new("bad_group_average", bad, cfg.bad_average_bound(), 0.0, None),
                // Reported as `bound <= measured`: the witness must clear the lower bound.
                CertificateReport::new("witness_welfare", cfg.opt_lower_bound(), witness, 1e-12, None),
            ];
            Ok((run, checks))
        }
        Family::Positive => {
            let q = p.positive().ok_or_else(|| anyhow!("the positive family needs 0 < p <= 1, got {p}"))?;
            let cfg = match spec.subset {
                Some(m) => PositiveAdversaryConfig::with_subset_size(n, q, m)?,
                None => PositiveAdversaryConfig::new(n, q)?,
            };
            let run = run_positive_adversary(&cfg, alloc, base)?;
            let allocated = run.allocated_through(run.upper_items)?;
            let w = utilities_of(&run.instance, &run.witness, &vec![0.0; n])?;
            let mut checks = Vec::new();
            for (l, group) in run.bad_groups.iter().enumerate() {
                let avg = AdversarialRun::group_average(&allocated, group);
                checks.push(CertificateReport::new(&format!("bad_group_average@{}", l + 1), avg, cfg.bad_average_bound(l + 1), 0.0, None));
                let low = group.iter().map(|&a| w[a]).fold(f64::INFINITY, f64::min);
                checks.push(CertificateReport::new(&format!("witness_bad@{}", l + 1), cfg.supplies[l], low, 1e-12, None));
            }
            let low = run.good_groups[0].iter().map(|&a| w[a]).fold(f64::INFINITY, f64::min);
            checks.push(CertificateReport::new("witness_good", PositiveAdversaryConfig::good_floor(), low, 0.0, None));
            Ok((run, checks))
        }
    }
}

/// Runs the allocator, solves for OPT, evaluates the certificates and assembles the report.
pub fn execute(setup: &Setup, source: Source) -> Result<Execution> {
    let started = Instant::now();
    let (alloc, base) = build_allocator(&setup.algo, setup.granularity, setup.relaxed, setup.p, setup.uniform_share)?;
    let (label, instance, trace, adversarial, mut certificates) = match source {
        Source::File { label, instance } => {
            let report = validate_instance(&instance, RUN_VALIDATION_TOL);
            if !report.pass && !setup.allow_invalid {
                bail!("instance {label} is invalid (worst deviation {:.3e}); pass --allow-invalid to run it anyway", report.max_deviation());
            }
            let trace = if setup.allow_invalid {
                run_online_unchecked(&alloc, &instance, base)?
            } else {
                run_online(&alloc, &instance, base)?
            };
            (label, instance, trace, None, Vec::new())
        }
        Source::Adversary(spec) => {
            let (run, checks) = play(&spec, &alloc, base, setup.p)
                .with_context(|| format!("{} adversary at n = {}", spec.family, spec.n))?;
            let label = format!("adversary:{}:n={}", spec.family, spec.n);
            (label, run.instance.clone(), run.trace.clone(), Some(run), checks)
        }
    };
    let opt = solve_opt(&instance, setup.p, setup.tol, setup.max_iters)?;
    certificates.extend(certificate_suite(&SuiteInput {
        instance: &instance,
        allocator: &alloc,
        trace: &trace,
        relaxed: setup.relaxed,
        p: setup.p,
        opt: &opt,
    })?);

    let hash = instance_hash(&instance)?;
    let n = instance.n();
    // The ratio compares what was actually handed out; the relaxed base is reported apart.
    let allocated = utilities_of(&instance, &trace.allocation, &vec![0.0; n])?;
    let alg = p_mean_welfare(&allocated, setup.p)?;
    let with_base = p_mean_welfare(trace.final_utilities(), setup.p)?;
    let ratio = (alg > 0.0).then(|| opt.opt_value / alg);
    let bound = regime_bound(n, setup.p);
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        source: label,
        instance_hash: hash.clone(),
        n,
        m: instance.m(),
        algorithm: alloc.id(),
        granularity: alloc.granularity().map(|g| g.to_string()),
        relaxed: setup.relaxed,
        p: setup.p,
        alg_welfare: alg,
        alg_welfare_with_base: with_base,
        opt_estimate: opt.opt_value,
        opt_upper: opt.opt_upper(),
        certified_gap: opt.certified_gap,
        solver_iterations: opt.iterations,
        ratio,
        regime: Regime::classify(n, setup.p).label().to_string(),
        regime_bound: bound,
        within_regime_bound: ratio.map(|r| r <= bound),
        certificates_pass: certificates.iter().all(|c| c.pass),
        certificates,
        utilities: allocated.into_inner(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let artifact = RunArtifact {
        schema_version: SCHEMA_VERSION,
        instance_hash: hash,
        allocator: alloc,
        relaxed: setup.relaxed,
        p: setup.p,
        trace,
    };
    Ok(Execution { report, artifact, instance, opt, adversarial })
}
