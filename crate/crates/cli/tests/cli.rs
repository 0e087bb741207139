use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qwgeom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_on(cmd: &str, name: &str, extra: &[&str]) -> Output {
    let path = fixture(name);
    let mut args = vec![cmd, path.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("valid JSON on stdout")
}

#[test]
fn detect_exit_codes() {
    assert_eq!(run_on("detect", "ex1", &[]).status.code(), Some(0));
    assert_eq!(run_on("detect", "ex3", &[]).status.code(), Some(0));
    assert_eq!(run_on("detect", "ex2", &[]).status.code(), Some(3));
    let o = run(&["detect", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn detect_json_lists_terms() {
    let v = json(&run_on("detect", "ex1", &["--format", "json", "--debug-curves"]));
    assert_eq!(v["command"], "detect");
    assert_eq!(v["input_digest"].as_str().unwrap().len(), 64);
    assert_eq!(v["payload"]["gamma"].as_array().unwrap().len(), 3);
    assert!(v["payload"]["debug"]["curves"].is_object());
}

#[test]
fn measure_ex3_values() {
    let out = run_on("measure", "ex3", &["--perf", "f1", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let f1 = v["payload"]["performance"][0]["value"].as_f64().unwrap();
    assert!((f1 - 41.27125).abs() < 1e-3, "{f1}");
    let m00 = v["payload"]["mass_at_origin"].as_f64().unwrap();
    assert!((m00 - 0.0015758).abs() < 1e-6, "{m00}");
    let gap = v["payload"]["chain_recursion_max_difference"].as_f64().unwrap();
    assert!(gap < 1e-9, "{gap}");

    let table = stdout(&run_on("measure", "ex3", &["--perf", "f2"]));
    assert!(table.contains("F2 = 0.00157578"), "{table}");
}

#[test]
fn measure_refuses_non_representable() {
    let out = run_on("measure", "ex4", &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("qwgeom bound"));
}

#[test]
fn oracle_rejects_small_size() {
    let out = run_on("oracle", "ex4", &["--size", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_json_reports_estimates() {
    let v = json(&run_on(
        "oracle",
        "ex4",
        &["--size", "60", "--perf", "f1", "--format", "json"],
    ));
    let est = &v["payload"]["estimates"][0]["estimate"];
    let value = est["value"].as_f64().unwrap();
    assert!((value - 1.768).abs() < 0.01, "{value}");
    assert!(v["timings_ms"]["stationary"].as_f64().is_some());
}

#[test]
fn bound_sweep_csv() {
    let out = run_on("bound", "ex4", &["--perf", "f1", "--sweep", "12", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("candidate_index,rho,sigma,C,F_low,F_up"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert_eq!(r.len(), 6);
        let lo: f64 = r[4].parse().unwrap();
        let up: f64 = r[5].parse().unwrap();
        assert!(lo <= 1.768 && 1.768 <= up, "{r:?}");
    }
}

#[test]
fn bound_mixture_is_deterministic() {
    let args = ["--perf", "f2", "--perturb", "mixture", "--format", "json"];
    let a = json(&run_on("bound", "ex5", &args));
    let b = json(&run_on("bound", "ex5", &args));
    assert_eq!(a["payload"], b["payload"]);
    let lo = a["payload"]["bound"]["f_low"].as_f64().unwrap();
    let up = a["payload"]["bound"]["f_up"].as_f64().unwrap();
    assert!(lo <= 0.046 && 0.046 <= up, "[{lo}, {up}]");
}

#[test]
fn sequential_matches_parallel() {
    let args = ["--perf", "f1", "--sweep", "6", "--format", "csv"];
    let par = stdout(&run_on("bound", "ex4", &args));
    let mut seq_args = args.to_vec();
    seq_args.push("--sequential");
    let seq = stdout(&run_on("bound", "ex4", &seq_args));
    assert_eq!(par, seq);
}

#[test]
fn bound_warns_on_representable_model() {
    let out = run_on("bound", "ex1", &["--perf", "f1", "--samples", "4"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("exact value"));
}

#[test]
fn dump_paths_are_written() {
    let dir = std::env::temp_dir().join(format!("qwgeom-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let lp = dir.join("model.lp");
    let grid = dir.join("grid.csv");
    let out = run_on(
        "bound",
        "ex4",
        &[
            "--candidate",
            "5",
            "--samples",
            "12",
            "--dump-lp",
            lp.to_str().unwrap(),
            "--dump-grid",
            grid.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&lp).unwrap().len() > 100);
    let g = std::fs::read_to_string(&grid).unwrap();
    assert!(g.starts_with("i,j,value\n"));
    assert_eq!(g.lines().count(), 1 + 50 * 50);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn strict_turns_warnings_into_errors() {
    let out = run_on("bound", "ex1", &["--perf", "f1", "--samples", "4", "--strict"]);
    assert_eq!(out.status.code(), Some(1));
}
