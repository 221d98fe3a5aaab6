use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cli(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nonsmooth-belief"));
    cmd.args(args).env_remove("NONSMOOTH_BELIEF_SEED");
    if let Some(s) = seed_env {
        cmd.env("NONSMOOTH_BELIEF_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn list_names_experiments_and_models() {
    let o = cli(&["list"], None);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["compare-baseline", "error-sweep-jump", "spring_dashpot", "implicit_constraint"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
}

#[test]
fn empty_config_reports_required_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    std::fs::write(&path, "").unwrap();
    let o = cli(&["validate", "--config", path.to_str().unwrap()], None);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("`experiment`") && err.contains("`model`"), "{err}");
}

#[test]
fn validate_materializes_defaults_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(
        &path,
        r#"{"experiment": "crossing1d", "model": "crossing1d", "params": {"sigma0": 0.1}}"#,
    )
    .unwrap();
    let o = cli(&["validate", "--config", path.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["params"]["sigma0"], 0.1);
    assert_eq!(v["params"]["f1bar"], 3.0);
    assert_eq!(v["tolerances"]["switch_tol"], 1e-10);

    std::fs::write(&path, r#"{"experiment": "crossing1d", "model": "crossing1d", "colour": 1}"#)
        .unwrap();
    let o = cli(&["validate", "--config", path.to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn seed_precedence_is_flag_then_config_then_env() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": "crossing1d-error", "model": "crossing1d", "seed": 11}"#,
    )
    .unwrap();
    let cfg_s = cfg.to_str().unwrap();

    let run = |extra: &[&str], env: Option<&str>| {
        let mut args = vec!["run", "crossing1d-error", "--out", out_s];
        args.extend_from_slice(extra);
        let o = cli(&args, env);
        assert!(o.status.success(), "{}", stderr(&o));
        summary(&out)["seeds"]["master"].as_u64().unwrap()
    };
    assert_eq!(run(&["--config", cfg_s, "--seed", "5"], Some("7")), 5);
    assert_eq!(run(&["--config", cfg_s], Some("7")), 11);
    assert_eq!(run(&[], Some("7")), 7);
    assert_eq!(run(&[], None), 0);
}

#[test]
fn run_writes_trace_and_summary_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = cli(
            &["run", "crossing1d", "--out", d.to_str().unwrap(), "--samples", "200", "--seed", "3"],
            None,
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["trace.csv", "samples.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let trace = std::fs::read_to_string(a.join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,mu_0,Sigma_00,ref_mu_0,ref_Sigma_00,err_mean,err_cov"));
    let s = summary(&a);
    assert_eq!(s["config"]["samples"], 200);
    assert_eq!(s["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    assert!(s["tolerances"]["configured"]["switch_tol"].is_number());
    assert!(s["tolerances"]["builtin"].is_object());
    assert!(s["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn failures_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = cli(&["run", "no-such-experiment", "--out", out.to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no-such-experiment"));

    let o = cli(&["run", "crossing1d", "--config", "/nonexistent/c.json"], None);
    assert!(!o.status.success());

    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"experiment": "quadcopter", "model": "quadcopter"}"#).unwrap();
    let o = cli(&["run", "crossing1d", "--config", cfg.to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("quadcopter"));

    let o = cli(&["run", "crossing1d-error", "--out", out.to_str().unwrap()], Some("seven"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("NONSMOOTH_BELIEF_SEED"));

    let o = cli(&["run", "crossing1d-error", "--steps", "0", "--out", out.to_str().unwrap()], None);
    assert!(!o.status.success());
}
