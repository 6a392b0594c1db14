use std::process::{Command, Output};

use serde_json::Value;
use sibling_collector::cli::CliError;
use sibling_collector::quadrature::{ExpectationResult, QuadratureError};

fn sibling(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sibling"))
        .args(args)
        .env_remove("SIBLING_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# sibling-collector v1"));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].clone()).collect()
}

const EQUAL: &str = r#"{"kind":"equal"}"#;

#[test]
fn compute_equal_prints_harmonic_rational() {
    let o = sibling(&["compute", "--family", EQUAL, "--N", "10"]);
    assert!(o.status.success());
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(column(&h, &rows, "value_num"), ["7381"]);
    assert_eq!(column(&h, &rows, "value_den"), ["2520"]);
}

#[test]
fn exact_json_has_the_documented_keys() {
    let o = sibling(&["compute", "--family", EQUAL, "--N", "3", "--j", "3", "--format", "json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema"], "sibling-collector v1");
    let row = &v["rows"][0];
    for key in ["method", "N", "j", "value_num", "value_den", "value_float"] {
        assert!(row.get(key).is_some(), "missing {key}");
    }
    // E[U_3^3] = Σ_{m≤3} H_m/m = 1 + 3/4 + 11/18 = 85/36.
    assert_eq!(row["value_num"], "85");
    assert_eq!(row["value_den"], "36");
}

#[test]
fn family_can_come_from_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fam.json");
    std::fs::write(&path, r#"{"kind":"zipf","p":1.5}"#).unwrap();
    let out = dir.path().join("out.csv");
    let o = sibling(&[
        "compute",
        "--family",
        path.to_str().unwrap(),
        "--N",
        "50",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let (h, rows) = csv_rows(&std::fs::read_to_string(out).unwrap());
    assert_eq!(column(&h, &rows, "family"), ["zipf(p=1.5)"]);
    assert_eq!(column(&h, &rows, "method"), ["quadrature"]);
}

#[test]
fn config_errors_exit_two() {
    let cases: [&[&str]; 6] = [
        &["compute", "--N", "5"],
        &["compute", "--family", r#"{"kind":"zipf","p":-1}"#, "--N", "5"],
        &["compute", "--family", EQUAL, "--Nlist", "100,10"],
        &["compute", "--family", EQUAL, "--N", "5", "--j", "1"],
        &["asympt", "--family", r#"{"kind":"linear"}"#, "--N", "100"],
        &["experiment", "--N", "500"],
    ];
    for args in cases {
        let o = sibling(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
    let o = sibling(&["compute", "--family", "/no/such/file.json", "--N", "5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sibling(&["compute", "--family", EQUAL, "--N", "5", "--out", "/no/such/dir/x.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn non_convergence_maps_to_three() {
    let best = ExpectationResult {
        value: 1.0,
        error_estimate: 0.5,
        nodes_used: 10,
        elapsed: Default::default(),
    };
    let e: CliError = QuadratureError::NonConvergence { best }.into();
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn diagnosed_divergence_exits_four_with_a_label() {
    let o = sibling(&["limit", "--family", r#"{"kind":"loglog","c":2}"#, "--format", "json"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diagnosed, not proven"));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let row = &v["rows"][0];
    assert_eq!(row["I_value"], "divergent");
    assert!((row["x_alpha"].as_f64().unwrap() - (-1f64).exp()).abs() < 1e-15);
}

#[test]
fn limit_report_for_power_growth() {
    let o = sibling(&["limit", "--family", r#"{"kind":"power","p":2}"#, "--format", "json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let row = &v["rows"][0];
    assert_eq!(row["x_alpha"], 1.0);
    assert_eq!(row["verdict"], "finite_by_counting");
    assert!((row["nu_hat"].as_f64().unwrap() - 0.5).abs() < 0.05);
    assert!(row["I_value"].as_f64().unwrap() > 0.0);
    assert!(row["tail_bound"].as_f64().unwrap() >= 0.0);
}

#[test]
fn compare_fills_only_applicable_engines() {
    let o = sibling(&["compare", "--family", EQUAL, "--N", "10", "--reps", "20000", "--seed", "7"]);
    assert!(o.status.success());
    let (h, rows) = csv_rows(&stdout(&o));
    let exact: f64 = column(&h, &rows, "exact")[0].parse().unwrap();
    let quad: f64 = column(&h, &rows, "quadrature")[0].parse().unwrap();
    let z: f64 = column(&h, &rows, "sim_z")[0].parse().unwrap();
    assert!((exact - 7381.0 / 2520.0).abs() < 1e-15);
    assert!((quad - exact).abs() < 1e-8);
    assert!(z.abs() < 3.0);
    assert_eq!(column(&h, &rows, "asymptotic"), [""]);
}

#[test]
fn compare_log_growth_column_rises_and_flattens() {
    let o = sibling(&[
        "compare",
        "--family",
        r#"{"kind":"log"}"#,
        "--Nlist",
        "100,1000,10000",
        "--reps",
        "0",
    ]);
    assert!(o.status.success());
    let (h, rows) = csv_rows(&stdout(&o));
    let q: Vec<f64> = column(&h, &rows, "quadrature")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert!(q[0] < q[1] && q[1] < q[2]);
    assert!(q[2] - q[1] < q[1] - q[0]);
    assert_eq!(column(&h, &rows, "sim_mean"), ["", "", ""]);
    assert_eq!(column(&h, &rows, "exact"), ["", "", ""]);
}

#[test]
fn compare_zipf_reports_the_expansion_gap() {
    let o = sibling(&[
        "compare",
        "--family",
        r#"{"kind":"zipf","p":1}"#,
        "--Nlist",
        "100,10000",
        "--reps",
        "0",
    ]);
    assert!(o.status.success());
    let (h, rows) = csv_rows(&stdout(&o));
    let q: Vec<f64> = column(&h, &rows, "quadrature").iter().map(|s| s.parse().unwrap()).collect();
    let a: Vec<f64> = column(&h, &rows, "asymptotic").iter().map(|s| s.parse().unwrap()).collect();
    let gap: Vec<f64> = column(&h, &rows, "asympt_rel_gap").iter().map(|s| s.parse().unwrap()).collect();
    for i in 0..2 {
        assert!((gap[i] - (q[i] - a[i]).abs() / q[i]).abs() < 1e-15);
    }
    assert!(gap[1] < gap[0], "{gap:?}");
}

#[test]
fn output_is_identical_across_runs_and_thread_counts() {
    let args = [
        "compare",
        "--family",
        r#"{"kind":"zipf","p":1}"#,
        "--Nlist",
        "10,200",
        "--jmax",
        "3",
        "--reps",
        "5000",
        "--seed",
        "11",
    ];
    let base = sibling(&args);
    assert!(base.status.success());
    let again = sibling(&args);
    assert_eq!(base.stdout, again.stdout);
    let mut one = args.to_vec();
    one.extend(["--threads", "1"]);
    assert_eq!(sibling(&one).stdout, base.stdout);
    let env = Command::new(env!("CARGO_BIN_EXE_sibling"))
        .args(args)
        .env("SIBLING_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(env.stdout, base.stdout);
}

#[test]
fn timing_adds_a_column_only_on_request() {
    let plain = stdout(&sibling(&["compute", "--family", EQUAL, "--N", "5"]));
    assert!(!plain.lines().nth(1).unwrap().ends_with(",ms"));
    let timed = stdout(&sibling(&["compute", "--family", EQUAL, "--N", "5", "--timing"]));
    assert!(timed.lines().nth(1).unwrap().ends_with(",ms"));
}

#[test]
fn simulate_and_experiment_emit_rows() {
    let o = sibling(&["simulate", "--family", EQUAL, "--N", "20", "--jmax", "3", "--reps", "2000"]);
    assert!(o.status.success());
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(column(&h, &rows, "j"), ["2", "3"]);
    let o = sibling(&["experiment", "--Nlist", "2,3", "--reps", "50"]);
    assert!(o.status.success());
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(column(&h, &rows, "violations"), ["0", "0"]);
    let uni: f64 = column(&h, &rows, "uniform")[0].parse().unwrap();
    assert!((uni - 1.5).abs() < 1e-9);
}

#[test]
fn help_and_version_succeed() {
    assert!(sibling(&["--help"]).status.success());
    assert!(sibling(&["--version"]).status.success());
}
