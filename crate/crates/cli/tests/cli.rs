use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pmean_arena::regime::{regime_bound, Regime};
use pmean_core::adversary::{random_instance, Distribution};
use pmean_core::{Instance, PMeanParam};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pmean-arena"));
    c.env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_instance(dir: &Path, name: &str, inst: &Instance) -> PathBuf {
    let path = dir.join(name);
    inst.write_json(&path).unwrap();
    path
}

fn json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn strip_wall_time(mut v: Value) -> Value {
    match &mut v {
        Value::Object(map) => {
            map.remove("wall_time_s");
            for x in map.values_mut() {
                *x = strip_wall_time(x.take());
            }
        }
        Value::Array(xs) => {
            for x in xs.iter_mut() {
                *x = strip_wall_time(x.take());
            }
        }
        _ => {}
    }
    v
}

#[test]
fn regime_bounds_match_golden_file() {
    let golden = include_str!("golden/regime_bounds.csv");
    let mut rows = 0;
    for line in golden.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let n: usize = f[0].parse().unwrap();
        let p: PMeanParam = f[1].parse().unwrap();
        let want: f64 = f[3].parse().unwrap();
        assert_eq!(Regime::classify(n, p).label(), f[2], "n={n} p={p}");
        let got = regime_bound(n, p);
        assert!((got - want).abs() <= 1e-12 * want.abs(), "n={n} p={p}: {got} vs {want}");
        rows += 1;
    }
    assert_eq!(rows, 135);
}

#[test]
fn reports_carry_the_golden_bound() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_instance(dir.path(), "id.json", &Instance::identity(5).unwrap());
    let golden = include_str!("golden/regime_bounds.csv");
    for line in golden.lines().skip(1).filter(|l| l.starts_with("5,")) {
        let f: Vec<&str> = line.split(',').collect();
        let r = json(&run(&["run", "--instance", path.to_str().unwrap(), "--algo", "uniform", "--p", f[1]]));
        assert_eq!(r["regime"], f[2]);
        let want: f64 = f[3].parse().unwrap();
        assert!((r["regime_bound"].as_f64().unwrap() - want).abs() <= 1e-12 * want);
    }
}

#[test]
fn uniform_on_identity_has_ratio_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_instance(dir.path(), "id.json", &Instance::identity(2).unwrap());
    let r = json(&run(&["run", "--instance", path.to_str().unwrap(), "--algo", "uniform", "--p", "nash"]));
    assert!((r["alg_welfare"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((r["opt_estimate"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((r["ratio"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["instance_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn nashian_on_identity_is_within_its_bound() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_instance(dir.path(), "id.json", &Instance::identity(2).unwrap());
    let r = json(&run(&["run", "--instance", path.to_str().unwrap(), "--algo", "nashian", "--p", "nash"]));
    assert!((r["ratio"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((r["regime_bound"].as_f64().unwrap() - 2.0 * 3f64.ln()).abs() < 1e-12);
    assert_eq!(r["within_regime_bound"], true);
    assert_eq!(r["certificates_pass"], true);
    let names: Vec<&str> = r["certificates"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["fundamental_lemma", "nashian_ratio"]);
}

#[test]
fn identity_sweep_gives_ratio_one() {
    let out = run(&[
        "sweep",
        "--p=-8,-2,-1,-0.5,-0.1,nash,0.1,0.5,1",
        "--n",
        "2,4,7",
        "--algo",
        "nashian",
        "--corpus",
        "identity",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let headers = rdr.headers().unwrap().clone();
    let ratio = headers.iter().position(|h| h == "ratio").unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert!((rec[ratio].parse::<f64>().unwrap() - 1.0).abs() < 1e-9, "{rec:?}");
        rows += 1;
    }
    assert_eq!(rows, 27);
}

#[test]
fn sweep_rows_follow_the_key_order() {
    let out = run(&["sweep", "--p=0.5,-1", "--n", "3,2", "--algo", "uniform,mixed", "--corpus", "random", "--instances", "2", "--seed", "9"]);
    assert_eq!(code(&out), 0);
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let keys: Vec<(String, String, String, String)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].to_string(), r[2].to_string(), r[3].to_string())
        })
        .collect();
    assert_eq!(keys.len(), 16);
    assert_eq!(keys[0], ("2".into(), "-1".into(), "mixed".into(), "0".into()));
    assert_eq!(keys[1], ("2".into(), "-1".into(), "mixed".into(), "1".into()));
    assert_eq!(keys[2].2, "uniform");
    assert_eq!(keys[4].1, "0.5");
    assert_eq!(keys[8].0, "3");
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let inst = random_instance(6, 12, 42, Distribution::Correlated, None).unwrap();
    let path = write_instance(dir.path(), "r.json", &inst);
    let args = ["run", "--instance", path.to_str().unwrap(), "--algo", "mixed", "--p", "-2"];
    let a = strip_wall_time(json(&run(&args)));
    let b = strip_wall_time(json(&run(&args)));
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

    let sweep = ["sweep", "--p=-1,nash,0.5", "--n", "3,5", "--algo", "nashian,reg_pd", "--corpus", "random", "--instances", "3", "--seed", "4"];
    let one = bin().args(sweep).env("PMEAN_ARENA_THREADS", "1").output().unwrap();
    let many = bin().args(sweep).env("PMEAN_ARENA_THREADS", "4").output().unwrap();
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, many.stdout);
}

#[test]
fn missing_file_is_an_input_error() {
    let out = run(&["run", "--instance", "/nonexistent/inst.json", "--algo", "nashian", "--p", "nash"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/inst.json"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&run(&["run", "--algo", "nashian"])), 2);
    assert_eq!(code(&run(&["sweep", "--n", "2", "--algo", "nashian"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let path = write_instance(dir.path(), "id.json", &Instance::identity(2).unwrap());
    let p = path.to_str().unwrap();
    assert_eq!(code(&run(&["run", "--instance", p, "--algo", "pd_greedy", "--p", "-1"])), 2);
    assert_eq!(code(&run(&["run", "--instance", p, "--algo", "bogus", "--p", "nash"])), 2);
    assert_eq!(code(&run(&["run", "--instance", p, "--algo", "nashian", "--p", "2"])), 2);
}

#[test]
fn invalid_instance_needs_the_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"n": 2, "predicted_monopolist": [2.0, 1.0], "items": [{"values": [1.0, 0.0]}, {"values": [0.0, 1.0]}]}"#).unwrap();
    let p = path.to_str().unwrap();
    let v = run(&["validate", "--instance", p]);
    assert_eq!(code(&v), 1);
    let report: Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(report["pass"], false);
    assert_eq!(code(&run(&["run", "--instance", p, "--algo", "nashian", "--p", "nash"])), 2);
    assert_eq!(code(&run(&["run", "--instance", p, "--algo", "nashian", "--p", "nash", "--allow-invalid"])), 0);
}

fn certify_rows(out: &Output) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(out.stdout.as_slice()).records().map(|r| r.unwrap()).collect()
}

#[test]
fn certify_pd_greedy_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let inst = random_instance(5, 10, 3, Distribution::Uniform, None).unwrap();
    let path = write_instance(dir.path(), "r.json", &inst);
    let art = dir.path().join("art.json");
    let p = path.to_str().unwrap();
    let a = art.to_str().unwrap();
    let r = run(&["run", "--instance", p, "--algo", "pd_greedy", "--p", "0.5", "--artifact", a]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));

    let ok = run(&["certify", "--instance", p, "--artifact", a]);
    assert_eq!(code(&ok), 0);
    let rows = certify_rows(&ok);
    let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(names, ["dual_feasibility", "pd_ratio", "weak_duality"]);
    assert!(rows.iter().all(|r| &r[6] == "true"));

    // Lower every dual price; feasibility must fail.
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&art).unwrap()).unwrap();
    for price in doc["trace"]["state"]["alphas"].as_array_mut().unwrap() {
        price["floor"] = Value::from(price["floor"].as_f64().unwrap() * 0.5);
        price["paid"] = Value::from(price["paid"].as_f64().unwrap() * 0.5);
    }
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = run(&["certify", "--instance", p, "--artifact", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let rows = certify_rows(&out);
    assert_eq!(&rows[0][0], "dual_feasibility");
    assert_eq!(&rows[0][6], "false");
}

#[test]
fn certify_refuses_a_different_instance() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_instance(dir.path(), "a.json", &Instance::identity(3).unwrap());
    let b = write_instance(dir.path(), "b.json", &Instance::identity(4).unwrap());
    let art = dir.path().join("art.json");
    let r = run(&["run", "--instance", a.to_str().unwrap(), "--algo", "nashian", "--p", "nash", "--artifact", art.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    let out = run(&["certify", "--instance", b.to_str().unwrap(), "--artifact", art.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn certify_mixed_has_floor_and_critical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let inst = random_instance(8, 16, 11, Distribution::Sparse(3), None).unwrap();
    let path = write_instance(dir.path(), "r.json", &inst);
    let art = dir.path().join("art.json");
    let p = path.to_str().unwrap();
    let a = art.to_str().unwrap();
    assert_eq!(code(&run(&["run", "--instance", p, "--algo", "mixed", "--p", "-2", "--artifact", a])), 0);
    let out = run(&["certify", "--instance", p, "--artifact", a]);
    assert_eq!(code(&out), 0);
    let rows = certify_rows(&out);
    let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert!(names.contains(&"utility_floor"));
    assert!(names.contains(&"critical_count_beta_star"));
    assert_eq!(names.iter().filter(|n| **n == "critical_agents").count(), 4);
    assert!(rows.iter().filter(|r| &r[0] == "critical_agents").all(|r| !r[3].is_empty() && !r[2].is_empty()));
}

#[test]
fn opt_writes_result_and_allocation() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_instance(dir.path(), "id.json", &Instance::identity(3).unwrap());
    let alloc = dir.path().join("x.csv");
    let out = run(&["opt", "--instance", path.to_str().unwrap(), "--p", "-inf", "--allocation", alloc.to_str().unwrap()]);
    let r = json(&out);
    assert!((r["opt_value"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let csv = std::fs::read_to_string(&alloc).unwrap();
    assert!(csv.starts_with("item,agent,fraction"));
}

#[test]
fn adversary_writes_its_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("neg");
    let out = run(&[
        "adversary", "--family", "negative", "--n", "256", "--p", "-1", "--opponent", "nashian", "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["instance.json", "allocation.csv", "report.json", "artifact.json", "groups.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let names: Vec<&str> = report["certificates"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"bad_group_average"));
    assert!(names.contains(&"witness_welfare"));
    assert!(report["ratio"].as_f64().unwrap() > 1.0);
    let inst = Instance::read_json(&out_dir.join("instance.json")).unwrap();
    assert_eq!(inst.n(), 256);
}
