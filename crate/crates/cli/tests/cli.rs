use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const T1: &str = r#"{"stages":[{"kind":"discrete","support":[[0.0],[1.0],[2.0]],"probs":[0.25,0.5,0.25]}]}"#;
const T2: &str = r#"{"stages":[{"kind":"discrete","support":[[1.0],[2.0]],"probs":[0.5,0.5]},
    {"kind":"discrete","support":[[1.0],[2.0]],"probs":[0.5,0.5]}]}"#;
const ER: &str = r#"{"stages":[{"kind":"equal_revenue","v_max":20.0},{"kind":"equal_revenue","v_max":20.0}]}"#;

fn bamlab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bamlab"));
    cmd.args(args).env_remove("BAMLAB_NODE_CAP");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn file(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn record(out: &Output) -> Value {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

#[test]
fn solve_brackets_single_stage_optimum_and_writes_a_checkable_mechanism() {
    let dir = TempDir::new().unwrap();
    let inst = file(&dir, "t1.json", T1);
    let mech = dir.path().join("m.json");
    let out = bamlab(&["solve", "--instance", s(&inst), "--epsilon", "0.05", "--out", s(&mech)], &[]);
    assert_eq!(out.status.code(), Some(0));
    let rec = record(&out);
    let (lo, hi) = (rec["value_lower"].as_f64().unwrap(), rec["value_upper"].as_f64().unwrap());
    assert!(lo <= 0.75 + 1e-9 && 0.75 <= hi + 1e-9 && lo >= 0.95 * 0.75);
    for key in ["epsilon", "xi_star", "per_stage_breakpoint_counts", "lp_count"] {
        assert!(rec.get(key).is_some(), "{key}");
    }
    let check = bamlab(&["check", "--instance", s(&inst), "--mechanism", s(&mech)], &[]);
    assert_eq!(check.status.code(), Some(0));
    assert_eq!(record(&check)["verdicts"]["stagewise_ic"], true);
}

#[test]
fn solve_rejects_bad_input() {
    let dir = TempDir::new().unwrap();
    let er = file(&dir, "er.json", ER);
    let out = bamlab(&["solve", "--instance", s(&er)], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("continuous"));
    let t1 = file(&dir, "t1.json", T1);
    assert_eq!(bamlab(&["solve", "--instance", s(&t1), "--epsilon", "0"], &[]).status.code(), Some(2));
    assert_eq!(bamlab(&["solve", "--instance", "/nonexistent.json"], &[]).status.code(), Some(2));
    assert_eq!(bamlab(&["approx", "--instance", s(&t1), "--mech", "nope"], &[]).status.code(), Some(2));
}

#[test]
fn check_fails_with_witness_on_overcharge() {
    let dir = TempDir::new().unwrap();
    let inst = file(&dir, "t1.json", T1);
    let mech = file(
        &dir,
        "bad.json",
        r#"{"nodes":[{"history":[0],"alloc":[0.0],"pay":0.0},{"history":[1],"alloc":[1.0],"pay":1.0},
            {"history":[2],"alloc":[1.0],"pay":1.5}]}"#,
    );
    let out = bamlab(&["check", "--instance", s(&inst), "--mechanism", s(&mech)], &[]);
    assert_eq!(out.status.code(), Some(1));
    let rec = record(&out);
    assert_eq!(rec["verdicts"]["stagewise_ic"], false);
    assert!(!rec["witnesses"].as_array().unwrap().is_empty());
}

#[test]
fn bound_on_one_stage_is_the_myerson_revenue() {
    let dir = TempDir::new().unwrap();
    let inst = file(&dir, "t1.json", T1);
    let rec = record(&bamlab(&["bound", "--instance", s(&inst)], &[]));
    assert!((rec["total"].as_f64().unwrap() - 0.75).abs() < 1e-12);
}

#[test]
fn oracle_respects_the_node_cap() {
    let dir = TempDir::new().unwrap();
    let inst = file(&dir, "t2.json", T2);
    let rec = record(&bamlab(&["oracle", "--instance", s(&inst)], &[]));
    assert!((rec["revenue"].as_f64().unwrap() - 2.25).abs() < 1e-7);
    let out = bamlab(&["oracle", "--instance", s(&inst)], &[("BAMLAB_NODE_CAP", "3")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap is 3"));
}

#[test]
fn approx_reports_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let inst = file(&dir, "t2.json", T2);
    for mech in ["three-approx", "best-sigma", "msm", "alpha-mix"] {
        let a = bamlab(&["approx", "--instance", s(&inst), "--mech", mech, "--alpha", "0.5"], &[]);
        let b = bamlab(&["approx", "--instance", s(&inst), "--mech", mech, "--alpha", "0.5"], &[]);
        assert_eq!(a.status.code(), Some(0));
        assert_eq!(a.stdout, b.stdout);
        let rec = record(&a);
        let rev = rec["exact_revenue"].as_f64().unwrap();
        assert!(rev <= rec["upper_bound"].as_f64().unwrap() + 1e-9);
        assert!(rec["ratio_vs_bruteforce"].as_f64().unwrap() <= 1.0 + 1e-7);
    }
}

#[test]
fn simulate_continuous_msm_earns_two() {
    let dir = TempDir::new().unwrap();
    let inst = file(&dir, "er.json", ER);
    let rec = record(&bamlab(&["simulate", "--instance", s(&inst), "--mech", "msm", "--samples", "20000", "--seed", "3"], &[]));
    assert!((rec["revenue_mean"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    let rec = record(&bamlab(&["approx", "--instance", s(&inst), "--mech", "three-approx", "--samples", "20000"], &[]));
    assert!(rec["monte_carlo_revenue"].as_f64().unwrap() > 0.0);
}

#[test]
fn example1_simulation_matches_quadrature() {
    let rec = record(&bamlab(&["example1", "--vmax", "20", "--samples", "1000000", "--seed", "1"], &[]));
    let quad = rec["quadrature_revenue"].as_f64().unwrap();
    let mc = rec["monte_carlo_revenue"].as_f64().unwrap();
    assert!((mc - quad).abs() <= 0.01 * quad);
    assert!(quad > 2.0 && mc > 2.0);
    assert_eq!(rec["history_independent_cap"], 2.0);
    assert_eq!(bamlab(&["example1", "--vmax", "0.5"], &[]).status.code(), Some(2));
}
