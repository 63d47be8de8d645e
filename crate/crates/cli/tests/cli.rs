use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bfqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bfqr"))
        .args(args)
        .output()
        .expect("spawn bfqr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn config_prints_loadable_toml() {
    let o = bfqr(&["config", "--desk"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("n = 20000"));
    assert!(text.contains("alpha = 0.1"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, text.replace("n = 20000", "n = 2500")).unwrap();
    let o = bfqr(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--seeds",
        "1",
        "--bins",
        "5",
        "--methods",
        "CQR,BFQR",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.lines().any(|l| l.starts_with("CQR")));
    assert!(table.lines().any(|l| l.starts_with("BFQR")));
    assert!(table.contains("seeds: 1/1 completed"));
}

#[test]
fn run_writes_reports_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bfqr(&[
        "run",
        "--desk",
        "--n",
        "3000",
        "--bins",
        "5",
        "--seeds",
        "2..4",
        "--t-repeats",
        "3",
        "--max-iters",
        "50",
        "--optimize-on",
        "calibration",
        "--out",
        out.to_str().unwrap(),
        "--traces",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in [
        "report.txt",
        "report.json",
        "trace_seed2.csv",
        "trace_seed3.csv",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["seeds_completed"], 2);
    assert_eq!(json["methods"].as_array().unwrap().len(), 5);
    assert_eq!(json["config"]["optimize_on"], "calibration");
    assert_eq!(
        fs::read_to_string(out.join("report.txt")).unwrap(),
        stdout(&o)
    );
}

#[test]
fn generate_then_run_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("syn.csv");
    let o = bfqr(&[
        "generate",
        "--n",
        "2500",
        "--seed",
        "5",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("x0,x1,x2,x3,x4,x5,x6,x7,x8,x9,a,y")
    );
    assert_eq!(text.lines().count(), 2501);

    let features = (0..10)
        .map(|j| format!("x{j}"))
        .collect::<Vec<_>>()
        .join(",");
    let o = bfqr(&[
        "run",
        "--dataset",
        csv.to_str().unwrap(),
        "--label",
        "y",
        "--group",
        "a",
        "--features",
        &features,
        "--bins",
        "4",
        "--seeds",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("seeds: 1/1 completed"));
}

#[test]
fn generate_is_deterministic() {
    let a = bfqr(&["generate", "--n", "50", "--seed", "9"]);
    let b = bfqr(&["generate", "--n", "50", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn errors_exit_with_code_two() {
    let cases: [&[&str]; 4] = [
        &["run", "--desk", "--methods", "XYZ"],
        &["run", "--desk", "--alpha", "1.5"],
        &["run", "--desk", "--seeds", "nope"],
        &["run", "--dataset", "data.csv"],
    ];
    for args in cases {
        let o = bfqr(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    }
}

#[test]
fn failed_seeds_exit_with_code_one() {
    // too few rows to fill every label bin once split
    let dir = tempfile::tempdir().unwrap();
    let o = bfqr(&[
        "run",
        "--desk",
        "--n",
        "30",
        "--bins",
        "20",
        "--seeds",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("seeds: 0/2 completed"));
    assert!(Path::new(&dir.path().join("report.json")).exists());
}
