use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn ma1m(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ma1m"))
        .args(args)
        .env_remove("MA1M_THREADS")
        .output()
        .expect("spawn ma1m")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate_to(path: &Path, alpha: &str, n: &str, dist: &str, seed: &str) {
    let out = ma1m(&["simulate", "--alpha", alpha, "--n", n, "--dist", dist, "--seed", seed, "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn variance_of_cdf_score_at_zero() {
    let v = json(&ma1m(&["variance", "--alpha", "0", "--dist", "normal", "--psi", "cdf_centered"]));
    assert!((v["sigma2"].as_f64().unwrap() - std::f64::consts::FRAC_PI_3).abs() < 1e-6);
    let v = json(&ma1m(&["variance", "--alpha", "-0.5", "--psi", "identity"]));
    assert!((v["sigma2"].as_f64().unwrap() - 0.75).abs() < 1e-9);
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    simulate_to(&a, "0.4", "300", "student_t:12", "99");
    simulate_to(&b, "0.4", "300", "student_t:12", "99");
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert!(text.starts_with("i,u,eps_true\n"));
    assert_eq!(text.lines().count(), 301);

    let out = ma1m(&["simulate", "--alpha", "0.4", "--n", "300", "--dist", "student_t:12", "--seed", "99"]);
    assert_eq!(out.stdout, bytes);
    let other = ma1m(&["simulate", "--alpha", "0.4", "--n", "300", "--dist", "student_t:12", "--seed", "100"]);
    assert_ne!(other.stdout, bytes);
}

#[test]
fn simulate_then_estimate_round_trip() {
    let dir = TempDir::new().unwrap();
    for dist in ["normal", "student_t:10", "logistic"] {
        let path = dir.path().join(format!("{}.csv", dist.replace(':', "_")));
        simulate_to(&path, "0.5", "3000", dist, "7");
        let cdf = format!("cdf_centered:{dist}");
        for psi in [cdf.as_str(), "huber", "huber:2", "identity"] {
            let v = json(&ma1m(&["estimate", "--in", path.to_str().unwrap(), "--psi", psi, "--dist", dist]));
            let a = v["alpha_hat"].as_f64().unwrap();
            assert!((a - 0.5).abs() < 0.1, "{dist} {psi}: {a}");
            assert_eq!(v["solver_status"], "converged", "{dist} {psi}");
            let ci = v["ci"].as_array().unwrap();
            assert!(ci[0].as_f64().unwrap() < a && a < ci[1].as_f64().unwrap());
        }
        // plug-in variance when the law is not given
        let v = json(&ma1m(&["estimate", "--in", path.to_str().unwrap(), "--psi", "huber"]));
        assert!(v["sigma2_psi"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn discontinuous_score_reports_crossing() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("u.csv");
    simulate_to(&path, "0.3", "1500", "normal", "3");
    let v = json(&ma1m(&["estimate", "--in", path.to_str().unwrap(), "--psi", "sign", "--dist", "normal"]));
    assert!((v["alpha_hat"].as_f64().unwrap() - 0.3).abs() < 0.15);
    let status = v["solver_status"].as_str().unwrap();
    assert!(status == "sign_change_crossing" || status == "converged", "{status}");
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec!["estimate", "--bogus"],
        vec!["variance", "--alpha", "0", "--psi", "nonsense"],
        vec!["variance", "--alpha", "0", "--dist", "student_t:3"],
        vec!["simulate", "--alpha", "1.5", "--n", "10"],
        vec!["estimate", "--in", "/nonexistent/series.csv"],
        vec!["frobnicate"],
    ] {
        let out = ma1m(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", stderr(&out));
        assert!(!stderr(&out).is_empty());
    }
    assert_eq!(ma1m(&["--help"]).status.code(), Some(0));
}

#[test]
fn numerical_failure_exits_two() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("u.csv");
    simulate_to(&path, "0.9", "4000", "normal", "3");
    let out = ma1m(&["estimate", "--in", path.to_str().unwrap(), "--psi", "huber:1", "--scan-bound", "0.5"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("constant sign"), "{}", stderr(&out));
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "u\n0.1\n-0.4\nbanana\n0.2\n").unwrap();
    let out = ma1m(&["estimate", "--in", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));
}

#[test]
fn conditions_report() {
    let v = json(&ma1m(&["conditions", "--dist", "logistic", "--psi", "huber"]));
    assert_eq!(v["total_variation_finite"], true);
    assert_eq!(v["integral_nonzero"], true);
    // the identity score has unbounded variation
    let out = ma1m(&["conditions", "--psi", "identity"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn mc_writes_summary_and_records() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("study.json");
    fs::write(
        &cfg,
        r#"{"alpha": 0.5, "n_values": [200, 400], "replications": 20, "study_kind": "normality", "base_seed": 11}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_ma1m"))
            .args(["mc", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()])
            .env("MA1M_THREADS", threads)
            .output()
            .unwrap()
    };
    let first = run("1");
    let v = json(&first);
    assert_eq!(v["blocks"].as_array().unwrap().len(), 2);
    let records = fs::read_to_string(out_dir.join("records_n200.csv")).unwrap();
    assert!(records.starts_with("rep,seed,alpha_hat,z,status\n"));
    assert_eq!(records.lines().count(), 21);
    assert!(out_dir.join("records_n400.csv").exists());
    let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, v);
    assert_eq!(run("3").stdout, first.stdout);

    assert_eq!(run("many").status.code(), Some(1));
    fs::write(&cfg, r#"{"alpha": 0.5, "n_values": [200], "replications": 5, "study_kind": "normality", "typo": 1}"#).unwrap();
    assert_eq!(run("1").status.code(), Some(1));
}

#[test]
fn ep_check_writes_surfaces() {
    let dir = TempDir::new().unwrap();
    let out = ma1m(&[
        "ep-check", "--alpha", "0.5", "--n", "400", "--reps", "2", "--seed", "1", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let v = json(&out);
    assert_eq!(v["sup_residual"].as_array().unwrap().len(), 2);
    let csv = fs::read_to_string(dir.path().join("ep_rep1.csv")).unwrap();
    assert!(csv.starts_with("n,tau,x,empirical,drift,residual\n"));
    assert!(!dir.path().join("ep_rep2.csv").exists());
}
