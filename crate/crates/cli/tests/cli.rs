use std::path::Path;
use std::process::{Command, Output};

use restent::report::BoundReport;
use tempfile::TempDir;

fn restent(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_restent"))
        .args(args)
        .current_dir(dir)
        .env("RESTENT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn printed_bound(o: &Output) -> f64 {
    let text = stdout(o);
    let line = text
        .lines()
        .find(|l| l.starts_with("bound: "))
        .unwrap_or_else(|| panic!("no bound line in:\n{text}"));
    line["bound: ".len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn lanford_bound_example() {
    let dir = TempDir::new().unwrap();
    let o = restent(
        dir.path(),
        &[
            "bound",
            "--system",
            "lanford",
            "--a",
            "0.6667",
            "--metric",
            "lanford-eq15",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let b = printed_bound(&o);
    assert!((b - 0.9618).abs() < 1e-3, "{b}");
    assert!(stdout(&o).contains("bits/time"));
    let report = BoundReport::read_json(&dir.path().join("bound.report.json")).unwrap();
    assert_eq!(report.bound, b);
    assert!(dir.path().join("bound.points.csv").exists());
}

#[test]
fn identity_and_diagonal_examples() {
    let dir = TempDir::new().unwrap();
    let o = restent(dir.path(), &["bound", "--system", "identity", "--metric", "identity"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(printed_bound(&o), 0.0);

    let o = restent(
        dir.path(),
        &[
            "bound",
            "--system",
            "linmap",
            "--matrix",
            "diag:2,0.5",
            "--metric",
            "identity",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(printed_bound(&o), 1.0);
    assert!(stdout(&o).contains("bits/step"));
}

#[test]
fn report_json_round_trips() {
    let dir = TempDir::new().unwrap();
    let o = restent(
        dir.path(),
        &[
            "bound",
            "--system",
            "linmap",
            "--matrix",
            "rows:2,3;0,0.5",
            "--metric",
            "auto:3",
            "--output",
            "r",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("r.report.json")).unwrap();
    let report = BoundReport::from_json(&text).unwrap();
    assert_eq!(BoundReport::from_json(&report.to_json().unwrap()).unwrap(), report);
    assert_eq!(report.horizon, Some(3.0));
}

#[test]
fn identical_runs_give_identical_csv() {
    let dir = TempDir::new().unwrap();
    let args = |stem: &'static str| {
        vec![
            "bound",
            "--system",
            "lanford",
            "--a",
            "0.75",
            "--metric",
            "lanford-eq15",
            "--output",
            stem,
        ]
    };
    assert_eq!(restent(dir.path(), &args("a")).status.code(), Some(0));
    assert_eq!(restent(dir.path(), &args("b")).status.code(), Some(0));
    let a = std::fs::read(dir.path().join("a.points.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.points.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn sweep_of_a_non_normal_map() {
    let dir = TempDir::new().unwrap();
    let o = restent(
        dir.path(),
        &[
            "sweep",
            "--system",
            "linmap",
            "--matrix",
            "rows:2,3;0,0.5",
            "--horizons",
            "1,2,4,8",
            "--resolution",
            "2",
            "--output",
            "s",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("monotonicity: nonincreasing"));
    let csv = std::fs::read_to_string(dir.path().join("s.sweep.csv")).unwrap();
    let bounds: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(bounds.len(), 4);
    assert!(bounds.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{bounds:?}");

    let o = restent(
        dir.path(),
        &[
            "bound",
            "--system",
            "linmap",
            "--matrix",
            "rows:2,3;0,0.5",
            "--metric",
            "identity",
            "--resolution",
            "2",
        ],
    );
    assert!((printed_bound(&o) - bounds[0]).abs() < 1e-12);
}

#[test]
fn config_file_drives_a_run() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"system": "linmap", "matrix": [[2, 0], [0, 0.5]], "metric": "identity", "resolution": [3], "output": "cfg"}"#,
    )
    .unwrap();
    let o = restent(dir.path(), &["bound", "--config", "run.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(printed_bound(&o), 1.0);
    assert!(dir.path().join("cfg.report.json").exists());

    std::fs::write(dir.path().join("bad.json"), r#"{"sytem": "linmap"}"#).unwrap();
    assert_eq!(
        restent(dir.path(), &["bound", "--config", "bad.json"]).status.code(),
        Some(1)
    );
}

#[test]
fn oracle_writes_its_files() {
    let dir = TempDir::new().unwrap();
    let o = restent(
        dir.path(),
        &[
            "oracle",
            "--system",
            "linmap",
            "--matrix",
            "diag:2,0.5",
            "--horizons",
            "1,4",
            "--output",
            "o",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("o.oracle.json").exists());
    assert!(dir.path().join("o.oracle.csv").exists());
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["bound", "--system", "nosuch"],
        vec!["bound", "--system", "linmap", "--metric", "lanford-eq15"],
        vec!["bound", "--system", "linmap", "--metric", "auto:0.5"],
        vec!["bound", "--system", "linmap", "--matrix", "1,2;3"],
        vec!["bound", "--bogus-flag"],
        vec!["props", "--tol", "0"],
    ] {
        let o = restent(dir.path(), &args);
        assert_eq!(
            o.status.code(),
            Some(1),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn declared_lanford_box_fails_the_invariance_check() {
    let dir = TempDir::new().unwrap();
    let o = restent(
        dir.path(),
        &[
            "bound",
            "--system",
            "lanford",
            "--a",
            "1",
            "--metric",
            "lanford-eq15",
            "--box",
            "-1:1,-1:1,0:1.2",
            "--resolution",
            "5",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn singular_jacobian_is_a_numeric_failure() {
    let dir = TempDir::new().unwrap();
    let o = restent(
        dir.path(),
        &[
            "bound", "--system", "linmap", "--matrix", "diag:2,0", "--metric", "auto:2",
        ],
    );
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn props_pass_and_fail_codes() {
    let dir = TempDir::new().unwrap();
    let o = restent(dir.path(), &["props", "--instances", "20", "--dims", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("seed: 42"));
    let o = restent(
        dir.path(),
        &["props", "--instances", "20", "--dims", "2,3", "--tol", "1e-9"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stdout(&o));
}

#[test]
fn lanford_command_compares_with_the_closed_form() {
    let dir = TempDir::new().unwrap();
    let o = restent(
        dir.path(),
        &[
            "lanford",
            "--a",
            "0.75",
            "--resolution",
            "11",
            "--oracle-resolution",
            "5",
            "--horizons",
            "5,10",
            "--output",
            "l",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = BoundReport::read_json(&dir.path().join("l.report.json")).unwrap();
    assert!(report.oracle.is_some());
    assert!((report.bound - 2.0 * 0.5 / std::f64::consts::LN_2).abs() < 1e-3);
}
