use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn varplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varplan")).args(args).output().expect("binary runs")
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).to_path_buf()
}

fn demo() -> String {
    root().join("demo/three_bus.toml").to_string_lossy().into_owned()
}

fn fixture(name: &str) -> String {
    root().join("../core/fixtures").join(name).to_string_lossy().into_owned()
}

fn csv_rows(dir: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(dir.join("iterations.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iter,napsd_r,napsd_c,lb,ub,gap,total_mvar,best_cost,seconds"));
    lines.map(|l| l.split(',').map(String::from).collect()).collect()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn demo_manifest_runs() {
    let out = tempfile::tempdir().unwrap();
    let o = varplan(&["run", "--manifest", &demo(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(csv_rows(out.path()).len() >= 2);
    for f in ["plan.json", "solution.json", "summary.json"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    let summary = json(out.path().join("summary.json"));
    assert_eq!(summary["stop"], "gap");
    let plan = json(out.path().join("plan.json"));
    assert!(plan["final"]["discrete"]["total_cost"].as_f64().unwrap() > 0.0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("stop=gap"));
}

#[test]
fn zero_step_leaves_the_gap_column_empty() {
    let out = tempfile::tempdir().unwrap();
    let o = varplan(&[
        "run", "--manifest", &demo(), "--step-r", "0", "--step-c", "0", "--max-iter", "6",
        "--out", out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let rows = csv_rows(out.path());
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r[3].is_empty() && r[5].is_empty()));
    assert_eq!(json(out.path().join("summary.json"))["stop"], "timeout");
}

#[test]
fn iteration_limit_bounds_the_trace() {
    for case in ["two_bus.json", "three_bus.json", "ieee24.json"] {
        let out = tempfile::tempdir().unwrap();
        let o = varplan(&["run", "--case", &fixture(case), "--max-iter", "4", "--out", out.path().to_str().unwrap()]);
        assert!(o.status.success(), "{case}: {}", String::from_utf8_lossy(&o.stderr));
        let rows = csv_rows(out.path());
        assert!(rows.len() <= 5 && !rows.is_empty(), "{case}: {} rows", rows.len());
    }
}

#[test]
fn identical_runs_write_identical_traces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(&a, "1"), (&b, "3")] {
        let o = varplan(&[
            "run", "--case", &fixture("ieee24.json"), "--max-iter", "3", "--jobs", jobs, "--no-timing",
            "--out", dir.path().to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("iterations.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("solution.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn step_sweep_flags_the_pathology() {
    let out = tempfile::tempdir().unwrap();
    let o = varplan(&[
        "sweep", "--case", &fixture("two_bus.json"), "--axis", "step", "--values", "0,0.001,0.01,0.1,1",
        "--max-iter", "8", "--out", out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_path(out.path().join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 5);
    let saturated: Vec<(f64, bool)> =
        rows.iter().map(|r| (r[0].parse().unwrap(), &r[6] == "true")).collect();
    assert_eq!(saturated, vec![(0.0, false), (0.001, false), (0.01, false), (0.1, true), (1.0, true)]);
    assert!(out.path().join("step-0.1/iterations.csv").exists());
}

#[test]
fn single_value_sweep_matches_a_run() {
    let sweep_dir = tempfile::tempdir().unwrap();
    let run_dir = tempfile::tempdir().unwrap();
    let case = fixture("two_bus.json");
    let o = varplan(&[
        "sweep", "--case", &case, "--axis", "k", "--values", "2", "--max-iter", "5", "--no-timing",
        "--out", sweep_dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let o = varplan(&["run", "--case", &case, "--k", "2", "--max-iter", "5", "--no-timing", "--out", run_dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(
        fs::read(sweep_dir.path().join("k-2/iterations.csv")).unwrap(),
        fs::read(run_dir.path().join("iterations.csv")).unwrap()
    );
}

#[test]
fn reduced_candidates_on_three_bus() {
    let out = tempfile::tempdir().unwrap();
    let o = varplan(&["run", "--manifest", &demo(), "--candidates", "reduced", "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(json(out.path().join("summary.json"))["candidate_buses"], serde_json::json!([3]));
}

#[test]
fn exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let bad = varplan(&["run", "--case", &fixture("two_bus.json"), "--gap-tol", "2", "--out", o]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error=config code=2"));

    let missing = varplan(&["run", "--case", "/nonexistent/case.json", "--out", o]);
    assert_eq!(missing.status.code(), Some(3));

    let text = fs::read_to_string(fixture("two_bus.json")).unwrap();
    let mut case: serde_json::Value = serde_json::from_str(&text).unwrap();
    case["scenarios"][0]["probability"] = serde_json::json!(0.4);
    let path = out.path().join("bad.json");
    fs::write(&path, case.to_string()).unwrap();
    let invalid = varplan(&["run", "--case", path.to_str().unwrap(), "--out", o]);
    assert_eq!(invalid.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("sum to 1"));

    let mut case: serde_json::Value = serde_json::from_str(&text).unwrap();
    case["scenarios"][1]["q_dem"][1] = serde_json::json!(900.0);
    let path = out.path().join("infeasible.json");
    fs::write(&path, case.to_string()).unwrap();
    let failed = varplan(&["run", "--case", path.to_str().unwrap(), "--out", o]);
    assert_eq!(failed.status.code(), Some(4));
    assert!(out.path().join("summary.json").exists());
    assert_eq!(json(out.path().join("summary.json"))["stop"], "opf_failure");
}

#[test]
fn fixtures_round_trip_through_validate() {
    let out = tempfile::tempdir().unwrap();
    let path = out.path().join("rts.json");
    let o = varplan(&["gen-fixture", "--name", "ieee24", "--seed", "3", "--scenarios", "2", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let v = varplan(&["validate", "--case", path.to_str().unwrap()]);
    assert!(v.status.success(), "{}", String::from_utf8_lossy(&v.stdout));
    assert!(String::from_utf8_lossy(&v.stdout).contains("buses=24 branches=57"));
    let bundled = varplan(&["gen-fixture", "--name", "three-bus", "--out", out.path().join("t.json").to_str().unwrap()]);
    assert!(bundled.status.success());
    assert_eq!(fs::read(out.path().join("t.json")).unwrap(), fs::read(fixture("three_bus.json")).unwrap());
}
