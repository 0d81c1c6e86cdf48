use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robustcert")).args(args).output().unwrap()
}

fn run_env(args: &[&str], key: &str, val: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robustcert")).args(args).env(key, val).output().unwrap()
}

fn json(args: &[&str]) -> Value {
    let mut a = args.to_vec();
    a.push("--json");
    let o = run(&a);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn tmp(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("robustcert-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn check_reports_infeasible_point() {
    let r = json(&["check", "--problem", "ex3_2", "--point", "0.5,0"]);
    assert_eq!(r["schema"], 1);
    assert_eq!(r["feasibility"]["feasible"], false);
    assert!((r["feasibility"]["psi"][0]["value"].as_f64().unwrap() - 1.0).abs() <= 1e-9);
    assert_eq!(r["verdicts"]["feasibility"], "infeasible");
}

#[test]
fn check_reports_worst_case_hull() {
    let r = json(&["check", "--problem", "examples/ex3_2.json", "--point", "0,1"]);
    let g = &r["subdifferentials"]["active_constraints"][0];
    assert_eq!(g["index"], 0);
    assert_eq!(g["worst_case_hull"]["vertices"], serde_json::json!([[1.0, 0.0], [2.0, 0.0]]));
}

#[test]
fn kkt_certificate_json() {
    let r = json(&["kkt", "--problem", "ex3_3", "--point", "0,1"]);
    assert_eq!(r["kkt"]["found"], true);
    assert!(r["kkt"]["search"]["certificate"]["residual"].as_f64().unwrap() <= 1e-8);
    assert_eq!(r["kkt"]["verification"]["passed"], true);
    assert_eq!(r["verdicts"]["stated_certificate"], "verified");
    let stated = &r["kkt"]["stated"]["certificate"];
    assert!((stated["y_star"][2].as_f64().unwrap() - 2f64.sqrt() / 5.0).abs() <= 1e-12);
    assert!((stated["mu"][0].as_f64().unwrap() - 0.6).abs() <= 1e-12);
}

#[test]
fn kkt_not_found_is_a_verdict_not_an_error() {
    let r = json(&["kkt", "--problem", "ex2_3", "--point", "0,-2"]);
    assert_eq!(r["kkt"]["found"], false);
    assert_eq!(r["verdicts"]["kkt"], "not found at resolution");
}

#[test]
fn json_output_is_deterministic() {
    let args = ["convexity", "--problem", "ex2_2", "--point", "0,-2", "--samples", "500", "--json"];
    let a = run(&args);
    let b = run_env(&args, "ROBUSTCERT_THREADS", "1");
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["kkt", "--problem", "ex3_2", "--json"]);
    let d = run(&["kkt", "--problem", "ex3_2", "--json"]);
    assert_eq!(c.stdout, d.stdout);
}

#[test]
fn text_and_json_carry_the_same_verdicts() {
    let args = ["dual", "--problem", "ex3_2", "--point", "0,1", "--grid", "41", "--samples", "500"];
    let r = json(&args);
    let text = String::from_utf8(run(&args).stdout).unwrap();
    let verdicts = r["verdicts"].as_object().unwrap();
    assert!(verdicts.len() >= 4);
    for (k, v) in verdicts {
        assert!(text.contains(&format!("  {k}: {}", v.as_str().unwrap())), "{k}");
    }
    assert_eq!(r["verdicts"]["dual_feasible"], "feasible");
    assert_eq!(r["verdicts"]["weak_duality"], "no violation");
}

#[test]
fn strict_dual_reading_rejects_the_stated_triple() {
    let r2 = 2f64.sqrt();
    let triple = format!(r#"{{"y": [0, 1], "y_star": [{}, 0, {}], "mu": [0.5, 0]}}"#, r2 / 4.0, r2 / 4.0);
    let base = ["dual", "--problem", "ex3_2", "--grid", "21", "--samples", "200", "--triple", &triple];
    let r = json(&base);
    assert_eq!(r["verdicts"]["dual_feasible"], "feasible");
    let mut strict = base.to_vec();
    strict.push("--strict-dual");
    let s = json(&strict);
    assert_eq!(s["verdicts"]["dual_feasible"], "infeasible");
    assert_eq!(s["dual"]["strict"], true);
}

#[test]
fn triple_from_file() {
    let path = tmp("triple.json");
    std::fs::write(&path, r#"{"y": [0, 1], "y_star": [0, 0, 1], "mu": [0, 1]}"#).unwrap();
    let r = json(&["dual", "--problem", "ex3_2", "--grid", "21", "--samples", "200", "--triple", path.to_str().unwrap()]);
    assert_eq!(r["verdicts"]["dual_feasible"], "infeasible");
}

#[test]
fn efficiency_and_convexity_verdicts() {
    let r = json(&["efficiency", "--problem", "ex2_3", "--grid", "101"]);
    assert_eq!(r["verdicts"]["efficient"], "refuted");
    let c = json(&["convexity", "--problem", "ex2_2", "--point", "0,-2", "--samples", "1000"]);
    assert_eq!(c["verdicts"]["type_i"], "not_refuted");
    assert_eq!(c["verdicts"]["type_ii"], "refuted");
}

#[test]
fn out_writes_the_report() {
    let path = tmp("cq.json");
    let o = run(&["cq", "--problem", "ex3_2", "--point", "0,1", "--json", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(r["verdicts"]["cq"], "holds");
    assert!((r["cq"]["entries"][0]["distance"].as_f64().unwrap() - 1.0).abs() <= 1e-9);
}

#[test]
fn usage_and_io_errors_exit_with_one() {
    assert_eq!(run(&["check", "--problem", "missing.json"]).status.code(), Some(1));
    assert_eq!(run(&["check", "--problem", "ex3_2", "--point", "1"]).status.code(), Some(1));
    assert_eq!(run(&["check", "--problem", "ex3_2", "--point", "a,b"]).status.code(), Some(1));
    assert_eq!(run(&["check", "--problem", "ex3_2", "--tol", "0"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate", "--problem", "ex3_2"]).status.code(), Some(1));
    assert_eq!(run_env(&["check", "--problem", "ex3_2"], "ROBUSTCERT_THREADS", "zero").status.code(), Some(1));
}

#[test]
fn arity_error_in_problem_file() {
    let path = tmp("arity.json");
    std::fs::write(
        &path,
        r#"{"decision_dim": 1, "uncertainty_dim": 1, "objectives": ["max(z1)"], "constraints": ["z1 - u1"],
            "uncertainty": {"type": "box", "lower": [0], "upper": [1]}, "cone": {"type": "orthant"},
            "box": {"lower": [-1], "upper": [1]}}"#,
    )
    .unwrap();
    let o = run(&["check", "--problem", path.to_str().unwrap(), "--point", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/objectives/0"), "{err}");
}
