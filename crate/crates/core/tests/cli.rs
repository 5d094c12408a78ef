use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use aoii::cli::{
    run, CONTOUR_HEADER, EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION, OPTIMA_HEADER, SCALING_HEADER, SWEEP_HEADER,
};
use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn aoii(args: &[&str]) -> i32 {
    run(std::iter::once("aoii").chain(args.iter().copied()))
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    (header, lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn solve_meets_budget() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("solve.json");
    let code = aoii(&["solve", "--config", fixture("q2_solve.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let rec = read_json(&out);
    let rate = rec["rate"].as_f64().unwrap();
    let slack = rec["status"] == "BudgetSlackAtZeroLambda";
    assert!(slack || (rate - 0.5).abs() <= 1e-2, "{rec}");
    assert_eq!(rec["tau"].as_array().unwrap().len(), 3);
    for key in ["lambda", "maoii", "eta", "iterations"] {
        assert!(!rec[key].is_null(), "missing {key}");
    }
}

#[test]
fn symmetric_source_gets_equal_thresholds() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sym.json");
    assert_eq!(
        aoii(&["solve", "--config", fixture("symmetric_solve.json").to_str().unwrap(), "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    let tau: Vec<f64> = read_json(&out)["tau"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(tau.iter().all(|t| (t - tau[0]).abs() <= 1e-3), "{tau:?}");
    assert!(tau[0] > 0.0);
}

#[test]
fn huge_budget_sends_immediately() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", r#"{"generator":[[-0.6,0.6],[0.75,-0.75]],"mu":1,"budget":1000}"#);
    let out = dir.path().join("s.json");
    assert_eq!(aoii(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let rec = read_json(&out);
    assert_eq!(rec["lambda"].as_f64(), Some(0.0));
    assert_eq!(rec["tau"], serde_json::json!([0.0, 0.0]));
    assert_eq!(rec["status"], "BudgetSlackAtZeroLambda");
}

#[test]
fn contour_grid_and_optima() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("fig.csv");
    assert_eq!(
        aoii(&["contour", "--config", fixture("q1_contour.json").to_str().unwrap(), "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, CONTOUR_HEADER);
    assert_eq!(rows.len(), 101 * 101);
    // Rows run over tau2 fastest; collect the rate column at fixed tau2.
    for k in [0usize, 20, 57, 100] {
        let rates: Vec<f64> = (0..101).map(|i| num(&rows[i * 101 + k][3])).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0] + 1e-12), "tau2 index {k}");
    }
    let (header, optima) = csv_rows(&dir.path().join("fig_optima.csv"));
    assert_eq!(header, OPTIMA_HEADER);
    assert_eq!(optima.len(), 8);
    for pair in optima.chunks(2) {
        assert_eq!((pair[0][1].as_str(), pair[1][1].as_str()), ("oracle", "csmdp"));
        let (oracle, solver) = (num(&pair[0][4]), num(&pair[1][4]));
        assert!((oracle - solver).abs() / oracle < 0.03, "{pair:?}");
    }
}

#[test]
fn contour_edge_cases() {
    let dir = TempDir::new().unwrap();
    let one = write_config(
        &dir,
        "one.json",
        r#"{"generator":[[-0.6,0.6],[0.75,-0.75]],"mu":1,"grid":{"step":1.0,"tau_max":0.0}}"#,
    );
    let out = dir.path().join("one.csv");
    assert_eq!(aoii(&["contour", "--config", &one, "--out", out.to_str().unwrap()]), EXIT_OK);
    assert_eq!(csv_rows(&out).1.len(), 1);

    let three = write_config(
        &dir,
        "three.json",
        &fs::read_to_string(fixture("q2_solve.json")).unwrap().replace("\"solve\"", "\"contour\""),
    );
    assert_eq!(
        aoii(&["contour", "--config", &three, "--out", dir.path().join("x.csv").to_str().unwrap()]),
        EXIT_CONFIG
    );
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let cfg = fixture("q1_simulate.json");
    assert_eq!(aoii(&["simulate", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]), EXIT_OK);
    assert_eq!(aoii(&["simulate", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]), EXIT_OK);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let rec = read_json(&a);
    let (sim, exact, se) = (
        rec["maoii_hat"].as_f64().unwrap(),
        rec["maoii_analytic"].as_f64().unwrap(),
        rec["stderr_maoii"].as_f64().unwrap(),
    );
    assert!((sim - exact).abs() <= 3.0 * se, "{rec}");
    let trace = fs::read_to_string(dir.path().join("a_trace.csv")).unwrap();
    assert!(trace.starts_with("time,kind,aoii_after\n"));
    assert_eq!(trace.matches("sync_by").count(), 20);

    let c = dir.path().join("c.json");
    assert_eq!(
        aoii(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "8", "--out", c.to_str().unwrap()]),
        EXIT_OK
    );
    assert_ne!(read_json(&c)["maoii_hat"], rec["maoii_hat"]);
}

#[test]
fn sweep_rows_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "sweep.json",
        r#"{"generator":[[-1.025,1.0,0.025],[0.05,-0.75,0.7],[0.4,0.01,-0.41]],
            "mus":[5.0],"budgets":[0.3,2.0],"cycles":20000,"seed":3,
            "single_threshold_grid":{"step":0.02,"tau_max":8.0}}"#,
    );
    let one = dir.path().join("one.csv");
    let four = dir.path().join("four.csv");
    assert_eq!(aoii(&["sweep-budget", "--config", &cfg, "--jobs", "1", "--out", one.to_str().unwrap()]), EXIT_OK);
    assert_eq!(aoii(&["sweep-budget", "--config", &cfg, "--jobs", "4", "--out", four.to_str().unwrap()]), EXIT_OK);
    assert_eq!(fs::read(&one).unwrap(), fs::read(&four).unwrap());
    let (header, rows) = csv_rows(&one);
    assert_eq!(header, SWEEP_HEADER);
    let policies: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(policies, ["csmdp", "single_threshold", "poisson", "csmdp", "single_threshold", "poisson"]);
    for group in rows.chunks(3) {
        let csmdp = num(&group[0][3]);
        for other in &group[1..] {
            assert!(csmdp <= num(&other[3]) + 3.0 * num(&other[7]), "{group:?}");
        }
    }
}

#[test]
fn validate_default_and_corrupted() {
    let dir = TempDir::new().unwrap();
    let good = dir.path().join("good.json");
    assert_eq!(aoii(&["validate", "--out", good.to_str().unwrap()]), EXIT_OK);
    let report = read_json(&good);
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_array().unwrap().len() > 10);

    let bad = dir.path().join("bad.json");
    let code = aoii(&[
        "validate",
        "--config",
        fixture("corrupted_generator.json").to_str().unwrap(),
        "--out",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_VALIDATION);
    let report = read_json(&bad);
    assert_eq!(report["passed"], false);
    assert!(report["checks"][0]["detail"].as_str().unwrap().contains("NegativeOffDiagonal"));
}

#[test]
fn scaling_small_sizes() {
    let dir = TempDir::new().unwrap();
    let cfg =
        write_config(&dir, "s.json", r#"{"sizes":[2,4,8],"seed":1,"solver":{"max_policy_iters":3,"eps_eta":1e-9}}"#);
    let out = dir.path().join("s.csv");
    assert_eq!(aoii(&["scaling", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, SCALING_HEADER);
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["2", "4", "8"]);
    assert!(rows.iter().all(|r| num(&r[1]) >= 0.0));
}

#[test]
fn config_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(aoii(&["solve", "--config", "/nonexistent/cfg.json"]), EXIT_CONFIG);
    assert_eq!(aoii(&["solve"]), EXIT_CONFIG);
    let no_budget = write_config(&dir, "nb.json", r#"{"generator":[[-0.6,0.6],[0.75,-0.75]],"mu":1}"#);
    assert_eq!(
        aoii(&["solve", "--config", &no_budget, "--out", dir.path().join("o.json").to_str().unwrap()]),
        EXIT_CONFIG
    );
    let wrong_mode = fixture("q1_contour.json");
    assert_eq!(aoii(&["solve", "--config", wrong_mode.to_str().unwrap()]), EXIT_CONFIG);
    assert_eq!(aoii(&["frobnicate"]), EXIT_CONFIG);
    assert_eq!(aoii(&["--help"]), EXIT_OK);
}

#[test]
fn binary_honors_output_dir() {
    let dir = TempDir::new().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_aoii"))
        .args(["solve", "--config", fixture("symmetric_solve.json").to_str().unwrap()])
        .env("AOII_OUT_DIR", dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_OK));
    assert!(dir.path().join("symmetric_solve.json").exists());

    let status = Command::new(env!("CARGO_BIN_EXE_aoii"))
        .args(["validate", "--config", fixture("corrupted_generator.json").to_str().unwrap()])
        .env("AOII_OUT_DIR", dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_VALIDATION));
}
