use std::fs;
use std::process::Command;

use splitkit::harness::BenchOutput;
use splitkit::problems::{AssetData, PortfolioInstance};

fn splitkit(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_splitkit")).args(args).env("SPLITKIT_THREADS", "2").output().expect("binary runs")
}

#[test]
fn qp_bench_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = splitkit(&["qp-bench", "--n", "20", "--q", "4", "--reps", "2", "--seed", "5", "--out", out]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    let summary: BenchOutput =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.command, "qp-bench");
    assert_eq!(summary.reports.len(), 4);
    assert_eq!(summary.summary.len(), 2);
    assert_eq!(summary.config["seed"], 5);

    let csv = fs::read_to_string(dir.path().join("qp-bench-000-fbhf.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iter,residual,objective,error,phi,time_s"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    // no known solution on random saddle instances
    assert_eq!((row[3], row[4]), ("", ""));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(splitkit(&["qp-bench", "--n", "7"]).status.code(), Some(2));
    assert_eq!(splitkit(&["qp-bench", "--bogus"]).status.code(), Some(2));
    assert_eq!(splitkit(&["qp-bench", "--algo", "fb", "--n", "10", "--q", "2"]).status.code(), Some(2));
    assert_eq!(splitkit(&["qp-bench", "--tol", "0"]).status.code(), Some(2));
    assert_eq!(splitkit(&["portfolio", "--dataset", "/nonexistent/port5.txt", "--r", "0.001"]).status.code(), Some(2));
    assert_eq!(splitkit(&[]).status.code(), Some(2));
    assert_eq!(splitkit(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let res = Command::new(env!("CARGO_BIN_EXE_splitkit"))
        .args(["qp-bench", "--n", "10", "--q", "2", "--reps", "1"])
        .env("SPLITKIT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn parse_errors_exit_with_three_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("port.txt");
    fs::write(&path, "2\n0.01 0.1\n0.02 x\n").unwrap();
    let res = splitkit(&["portfolio", "--dataset", path.to_str().unwrap(), "--r", "0.001"]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 3"));
}

#[test]
fn divergence_exits_with_one() {
    // The closed-form four-operator step scaled far beyond the condition.
    let res = splitkit(&[
        "qp-bench",
        "--n",
        "10",
        "--q",
        "2",
        "--reps",
        "1",
        "--algo",
        "fourop",
        "--fourop-step",
        "printed",
        "--gamma-scale",
        "50",
        "--max-iter",
        "100000",
    ]);
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn portfolio_runs_on_orlibrary_text_and_writes_solution() {
    let dir = tempfile::tempdir().unwrap();
    let assets = AssetData::synthetic(12, 4);
    let avg = assets.means.iter().sum::<f64>() / 12.0;
    let path = dir.path().join("port.txt");
    fs::write(&path, assets.to_orlibrary()).unwrap();
    let out = dir.path().join("out");
    let r = format!("--r={avg}");
    let res = splitkit(&[
        "portfolio",
        "--dataset",
        path.to_str().unwrap(),
        &r,
        "--algo",
        "fbhf,tseng",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let sol = fs::read_to_string(out.join("portfolio-000-fbhf-solution.csv")).unwrap();
    // 12 weights and 4 multipliers
    assert_eq!(sol.lines().count(), 1 + 16);
    let summary: BenchOutput = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let objs: Vec<f64> = summary.reports.iter().map(|r| r.final_objective.unwrap()).collect();
    assert!((objs[0] - objs[1]).abs() < 1e-6 * objs[0].abs().max(1e-6));
}

#[test]
fn portfolio_accepts_json_instances() {
    let dir = tempfile::tempdir().unwrap();
    let assets = AssetData::synthetic(9, 2);
    let avg = assets.means.iter().sum::<f64>() / 9.0;
    let path = dir.path().join("inst.json");
    fs::write(&path, PortfolioInstance::new(assets, avg).to_json()).unwrap();
    let res = splitkit(&["portfolio", "--dataset", path.to_str().unwrap(), "--algo", "fbhf"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains(&format!("r={avg}")));
}

#[test]
fn stoch_bench_and_synthetic_succeed() {
    let res = splitkit(&["stoch-bench", "--n", "20", "--parts", "4", "--reps", "2"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let res = splitkit(&["synthetic", "--n", "20", "--reps", "3", "--iters", "200"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let res = splitkit(&["synthetic", "--rho", "0", "--algo", "svr"]);
    assert_eq!(res.status.code(), Some(2));
}
