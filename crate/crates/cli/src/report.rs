//! Report and artifact schemas, and their writers.

use std::io::Write;

use anyhow::Result;
use pmean_core::allocators::{Allocator, RunTrace};
use pmean_core::certificates::CertificateReport;
use pmean_core::{Instance, PMeanParam};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exec::RelaxedMode;

/// Bumped whenever a field of [`RunReport`] or [`RunArtifact`] changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

/// SHA-256 of the canonical JSON form of the instance.
pub fn instance_hash(inst: &Instance) -> Result<String> {
    let json = inst.to_json_string()?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub source: String,
    pub instance_hash: String,
    pub n: usize,
    pub m: usize,
    pub algorithm: String,
    pub granularity: Option<String>,
    pub relaxed: RelaxedMode,
    pub p: PMeanParam,
    /// Welfare of the allocated utilities alone.
    pub alg_welfare: f64,
    /// Welfare including the starting utilities of the run (the `V_a / n` credit when assumed).
    pub alg_welfare_with_base: f64,
    pub opt_estimate: f64,
    pub opt_upper: f64,
    pub certified_gap: f64,
    pub solver_iterations: usize,
    /// `OPT / ALG`; absent when ALG is zero.
    pub ratio: Option<f64>,
    pub regime: String,
    pub regime_bound: f64,
    pub within_regime_bound: Option<bool>,
    pub certificates_pass: bool,
    pub certificates: Vec<CertificateReport>,
    /// Allocated utility per agent.
    pub utilities: Vec<f64>,
    pub wall_time_s: f64,
}

/// Everything `certify` needs to re-check a run against its instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub schema_version: u32,
    pub instance_hash: String,
    pub allocator: Allocator,
    pub relaxed: RelaxedMode,
    pub p: PMeanParam,
    pub trace: RunTrace,
}

/// Splits `name@beta` into its parts.
fn split_beta(name: &str) -> (&str, Option<&str>) {
    match name.split_once('@') {
        Some((base, beta)) => (base, Some(beta)),
        None => (name, None),
    }
}

/// Certificate table: `certificate,instance_id,t,beta,measured,bound,pass`.
pub fn write_certificate_csv<W: Write>(out: W, rows: &[(String, CertificateReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["certificate", "instance_id", "t", "beta", "measured", "bound", "pass"])?;
    for (instance, c) in rows {
        let (name, beta) = split_beta(&c.name);
        let t = c.worst_index.map(|t| t.to_string()).unwrap_or_default();
        w.write_record([
            name,
            instance,
            &t,
            beta.unwrap_or(""),
            &c.measured.to_string(),
            &c.bound.to_string(),
            if c.pass { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}
