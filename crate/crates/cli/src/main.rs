use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pmean_core::allocators::{Granularity, RUN_VALIDATION_TOL};
use pmean_core::certificates::CertificateReport;
use pmean_core::offline::{solve_opt, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use pmean_core::{validate_instance, Instance, PMeanParam};
use serde::Serialize;

use pmean_arena::exec::{execute, parse_family, AdversarySpec, RelaxedMode, Setup, Source};
use pmean_arena::report::{instance_hash, write_certificate_csv, write_json, RunArtifact, SCHEMA_VERSION};
use pmean_arena::suite::{certificate_suite, SuiteInput};
use pmean_arena::sweep::{run_sweep, write_sweep_csv, Corpus, SweepSpec};

#[derive(Parser)]
#[command(name = "pmean-arena", version, about = "Run, benchmark and certify online p-mean allocators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct AlgoArgs {
    /// uniform | nashian | egalitarian | mixed | pd_greedy | reg_pd
    #[arg(long)]
    algo: String,
    /// Exponent: a number <= 1, `nash`, or `-inf`.
    #[arg(long, allow_hyphen_values = true)]
    p: PMeanParam,
    #[arg(long, value_parser = parse_granularity)]
    granularity: Option<Granularity>,
    #[arg(long, value_enum, default_value_t = RelaxedMode::Assumed)]
    relaxed: RelaxedMode,
    /// Uniform share of the composer used by physical runs.
    #[arg(long)]
    uniform_share: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
}

impl AlgoArgs {
    fn setup(&self, allow_invalid: bool) -> Setup {
        let mut s = Setup::new(&self.algo, self.granularity, self.relaxed, self.p);
        s.uniform_share = self.uniform_share;
        s.allow_invalid = allow_invalid;
        s.tol = self.tol;
        s.max_iters = self.max_iters;
        s
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one allocator on an instance file and report against OPT.
    Run {
        /// Instance JSON.
        #[arg(long)]
        instance: PathBuf,
        #[command(flatten)]
        algo: AlgoArgs,
        #[arg(long)]
        allow_invalid: bool,
        /// Report destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the trace artifact `certify` reads.
        #[arg(long)]
        artifact: Option<PathBuf>,
        /// `json` writes the report, `csv` the certificate table.
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Run a grid of `(n, p, algo, instance)` cells.
    Sweep {
        /// Comma-separated exponents.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 0..)]
        p: Vec<PMeanParam>,
        /// Comma-separated agent counts.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        n: Vec<usize>,
        /// Comma-separated allocator ids.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        algo: Vec<String>,
        #[arg(long, value_enum, default_value_t = Corpus::Identity)]
        corpus: Corpus,
        #[arg(long, default_value_t = 1)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_granularity)]
        granularity: Option<Granularity>,
        #[arg(long, value_enum, default_value_t = RelaxedMode::Assumed)]
        relaxed: RelaxedMode,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Solve the offline benchmark.
    Opt {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        p: PMeanParam,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
        /// Result JSON; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optimal allocation as CSV.
        #[arg(long)]
        allocation: Option<PathBuf>,
    },
    /// Play an adversary family against an opponent allocator.
    Adversary {
        /// negative | positive
        #[arg(long, value_parser = parse_family)]
        family: pmean_core::adversary::Family,
        #[arg(long)]
        n: usize,
        /// Opponent allocator id.
        #[arg(long)]
        opponent: String,
        #[arg(long, allow_hyphen_values = true)]
        p: PMeanParam,
        /// Rounds of the negative family.
        #[arg(long = "L")]
        rounds: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        /// Gadget size of the positive family.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long, value_parser = parse_granularity)]
        granularity: Option<Granularity>,
        #[arg(long, value_enum, default_value_t = RelaxedMode::Assumed)]
        relaxed: RelaxedMode,
        #[arg(long)]
        uniform_share: Option<f64>,
        /// Directory for instance.json, allocation.csv, report.json and artifact.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check a run artifact against its instance.
    Certify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Check monopolist sums and value signs.
    Validate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = RUN_VALIDATION_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_granularity(s: &str) -> Result<Granularity, String> {
    s.parse().map_err(|e: pmean_core::Error| e.to_string())
}

/// Nonzero exit for a run whose checks failed, as opposed to bad input.
struct Failed;

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            Box::new(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn read_instance(path: &Path) -> Result<Instance> {
    Instance::read_json(path).with_context(|| format!("reading instance {}", path.display()))
}

fn emit<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    let mut w = sink(out)?;
    write_json(&mut w, value)?;
    w.flush()?;
    Ok(())
}

fn emit_certificates(out: &Option<PathBuf>, label: &str, certs: &[CertificateReport]) -> Result<()> {
    let rows: Vec<_> = certs.iter().map(|c| (label.to_string(), c.clone())).collect();
    let mut w = sink(out)?;
    write_certificate_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

fn verdict(pass: bool) -> Result<Option<Failed>> {
    Ok((!pass).then_some(Failed))
}

fn dispatch(cmd: Cmd) -> Result<Option<Failed>> {
    match cmd {
        Cmd::Run { instance, algo, allow_invalid, out, artifact, format } => {
            let inst = read_instance(&instance)?;
            let label = instance.display().to_string();
            let exec = execute(&algo.setup(allow_invalid), Source::File { label: label.clone(), instance: inst })?;
            if let Some(path) = &artifact {
                emit(&Some(path.clone()), &exec.artifact)?;
            }
            match format {
                Format::Json => emit(&out, &exec.report)?,
                Format::Csv => emit_certificates(&out, &label, &exec.report.certificates)?,
            }
            verdict(exec.report.certificates_pass)
        }
        Cmd::Sweep { p, n, algo, corpus, instances, seed, granularity, relaxed, out, format } => {
            let spec = SweepSpec { ps: p, ns: n, algos: algo, corpus, instances, seed, granularity, relaxed };
            let rows = run_sweep(&spec)?;
            match format {
                Format::Csv => {
                    let mut w = sink(&out)?;
                    write_sweep_csv(&mut w, &rows)?;
                    w.flush()?;
                }
                Format::Json => emit(&out, &rows)?,
            }
            let failed = rows.iter().filter(|r| r.report.as_ref().is_some_and(|r| !r.certificates_pass)).count();
            if failed > 0 {
                log::warn!("{failed} sweep rows failed a certificate");
            }
            verdict(failed == 0)
        }
        Cmd::Opt { instance, p, tol, max_iters, out, allocation } => {
            let inst = read_instance(&instance)?;
            let r = solve_opt(&inst, p, tol, max_iters)?;
            #[derive(Serialize)]
            struct OptOut {
                schema_version: u32,
                instance_hash: String,
                p: PMeanParam,
                opt_value: f64,
                certified_gap: f64,
                iterations: usize,
            }
            emit(
                &out,
                &OptOut {
                    schema_version: SCHEMA_VERSION,
                    instance_hash: instance_hash(&inst)?,
                    p,
                    opt_value: r.opt_value,
                    certified_gap: r.certified_gap,
                    iterations: r.iterations,
                },
            )?;
            if let Some(path) = allocation {
                let mut w = sink(&Some(path))?;
                r.allocation.write_csv(&mut w)?;
                w.flush()?;
            }
            Ok(None)
        }
        Cmd::Adversary { family, n, opponent, p, rounds, alpha, subset, granularity, relaxed, uniform_share, out } => {
            let mut setup = Setup::new(&opponent, granularity, relaxed, p);
            setup.uniform_share = uniform_share;
            let exec = execute(&setup, Source::Adversary(AdversarySpec { family, n, rounds, alpha, subset }))?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            exec.instance.write_json(&out.join("instance.json"))?;
            let mut w = sink(&Some(out.join("allocation.csv")))?;
            exec.artifact.trace.allocation.write_csv(&mut w)?;
            w.flush()?;
            emit(&Some(out.join("report.json")), &exec.report)?;
            emit(&Some(out.join("artifact.json")), &exec.artifact)?;
            if let Some(run) = &exec.adversarial {
                #[derive(Serialize)]
                struct Groups<'a> {
                    good: &'a [Vec<usize>],
                    bad: &'a [Vec<usize>],
                    upper_items: usize,
                }
                emit(&Some(out.join("groups.json")), &Groups { good: &run.good_groups, bad: &run.bad_groups, upper_items: run.upper_items })?;
            }
            verdict(exec.report.certificates_pass)
        }
        Cmd::Certify { instance, artifact, tol, max_iters, out, format } => {
            let inst = read_instance(&instance)?;
            let text = fs::read_to_string(&artifact).with_context(|| format!("reading artifact {}", artifact.display()))?;
            let art: RunArtifact = serde_json::from_str(&text).with_context(|| format!("parsing artifact {}", artifact.display()))?;
            if art.schema_version != SCHEMA_VERSION {
                bail!("artifact schema {} but this build reads {SCHEMA_VERSION}", art.schema_version);
            }
            let hash = instance_hash(&inst)?;
            if art.instance_hash != hash {
                bail!("artifact was produced on instance {} but {} hashes to {hash}", art.instance_hash, instance.display());
            }
            let opt = solve_opt(&inst, art.p, tol, max_iters)?;
            let certs = certificate_suite(&SuiteInput {
                instance: &inst,
                allocator: &art.allocator,
                trace: &art.trace,
                relaxed: art.relaxed,
                p: art.p,
                opt: &opt,
            })?;
            match format {
                Format::Csv => emit_certificates(&out, &instance.display().to_string(), &certs)?,
                Format::Json => emit(&out, &certs)?,
            }
            verdict(certs.iter().all(|c| c.pass))
        }
        Cmd::Validate { instance, tol, out } => {
            let inst = read_instance(&instance)?;
            let report = validate_instance(&inst, tol);
            emit(&out, &report)?;
            verdict(report.pass)
        }
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PMEAN_ARENA_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow!("PMEAN_ARENA_THREADS={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match init_threads().and_then(|_| dispatch(cli.cmd)) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Failed)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
