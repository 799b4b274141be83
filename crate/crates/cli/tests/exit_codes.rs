use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nilflow(dir: &Path, args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nilflow"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("NILFLOW_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("one record")).expect("json record")
}

#[test]
fn gh_report_golden_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let out = nilflow(dir.path(), &["gh-report", "-s", "n=8", "-s", "m=48"], "2");
    assert_eq!(out.status.code(), Some(0));
    let r = record(&out);
    assert_eq!(r["summary"]["verdict"], "certified");
    let csv = fs::read_to_string(dir.path().join("gh-report.csv")).unwrap();
    assert!(csv.starts_with("n,min_abs_eigenvalue,near_zero,trusted,raw\n"));
    assert_eq!(csv.lines().count(), 9);
    let jl = fs::read_to_string(dir.path().join("gh-report.jsonl")).unwrap();
    assert_eq!(jl.lines().count(), 1);
}

#[test]
fn gh_report_resonant_is_negative() {
    let dir = tempfile::tempdir().unwrap();
    let out = nilflow(dir.path(), &["gh-report", "-s", "alpha=1, 1/2", "-s", "n=4", "-s", "m=32"], "2");
    assert_eq!(out.status.code(), Some(2));
    let r = record(&out);
    assert_eq!(r["summary"]["verdict"], "negative");
    assert_eq!(r["summary"]["toral_argmin"], serde_json::json!([1, -2]));
}

#[test]
fn malformed_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "subcommand = kam\nK = abc\n").unwrap();
    let out = nilflow(dir.path(), &["kam", "--config", cfg.to_str().unwrap()], "1");
    assert_eq!(out.status.code(), Some(1));
    let r = record(&out);
    assert_eq!(r["status"], "error");
    assert_eq!(r["kind"], "TypeError");
    assert!(r["reason"].as_str().unwrap().contains("line 2"));
    let out = nilflow(dir.path(), &["witness"], "1");
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(record(&out)["kind"], "MissingKey");
    let out = nilflow(dir.path(), &["rigidity-step", "--perturbation-file", "/nonexistent/file"], "1");
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(record(&out)["kind"], "Io");
}

#[test]
fn output_is_independent_of_thread_count() {
    for args in [
        &["split", "-s", "samples=3", "-s", "seed=7"][..],
        &["rigidity-step", "-s", "samples=3", "-s", "seed=7"][..],
        &["gh-report", "-s", "n=6", "-s", "m=32"][..],
        &["cg-decay", "-s", "samples=5", "-s", "n=6"][..],
    ] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let oa = nilflow(a.path(), args, "1");
        let ob = nilflow(b.path(), args, "4");
        assert_eq!(oa.status.code(), ob.status.code(), "{args:?}");
        let name = format!("{}.csv", args[0]);
        let ca = fs::read(a.path().join(&name)).unwrap();
        let cb = fs::read(b.path().join(&name)).unwrap();
        assert!(!ca.is_empty());
        assert_eq!(ca, cb, "{args:?}");
        assert_eq!(oa.stdout, ob.stdout, "{args:?}");
    }
}

#[test]
fn rigidity_step_reads_a_perturbation_file() {
    let dir = tempfile::tempdir().unwrap();
    let pert = dir.path().join("omega.txt");
    fs::write(
        &pert,
        "# family shift plus a toral coboundary-like term\n\
         X1.Y1 toral 0 0 1e-3 0\n\
         X2.Z toral 0 0 -2e-3 0\n\
         X1.Y2 toral 1 0 0 6.283185307179586e-4\n\
         X1.Y2 toral -1 0 0 -6.283185307179586e-4\n",
    )
    .unwrap();
    let out = nilflow(
        dir.path(),
        &["rigidity-step", "--perturbation-file", pert.to_str().unwrap(), "--mu", "0", "--cutoff", "3"],
        "1",
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let r = record(&out);
    let lambda = &r["summary"]["coords"]["lambda"];
    assert!((lambda[0].as_f64().unwrap() - 1e-3).abs() < 1e-15);
    assert!((lambda[2].as_f64().unwrap() + 2e-3).abs() < 1e-15);
    assert!(r["summary"]["residual_norm"].as_f64().unwrap() < 1e-5);
}

#[test]
fn constant_cohomology_is_exact_for_rational_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = nilflow(dir.path(), &["constant-cohomology", "-s", "alpha=1, 2/3", "-s", "beta=1"], "1");
    assert_eq!(out.status.code(), Some(0));
    let r = record(&out);
    assert_eq!(r["summary"]["dimension"], 4);
    assert_eq!(r["summary"]["exact"], true);
}

#[test]
fn kam_converges_on_the_sine_perturbation() {
    let dir = tempfile::tempdir().unwrap();
    let out = nilflow(dir.path(), &["kam", "-s", "k=16", "-s", "grid=64"], "2");
    assert_eq!(out.status.code(), Some(0));
    let r = record(&out);
    assert!(r["summary"]["residual"].as_f64().unwrap() < 1e-12);
    assert!(r["summary"]["conjugacy_error"].as_f64().unwrap() < 1e-8);
    let csv = fs::read_to_string(dir.path().join("kam.csv")).unwrap();
    assert!(csv.starts_with("iteration,residual_r0,residual_r2,lambda_bar_0,lambda_bar_1\n"));
}
