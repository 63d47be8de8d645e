use std::fs;
use std::path::Path;

use bfqr_core::dataset::{generate_synthetic, CsvSchema, SYNTHETIC_FEATURES};
use bfqr_core::harness::{emit_report, run_experiment, DatasetSpec, JsonReport};
use bfqr_core::{Error, ExperimentConfig, GeneratorOptions, Method};

fn write_csv(path: &Path, n: usize, seed: u64) {
    let data = generate_synthetic(n, seed, GeneratorOptions::default());
    let mut w = csv::Writer::from_path(path).unwrap();
    let mut header: Vec<String> = (0..SYNTHETIC_FEATURES).map(|j| format!("x{j}")).collect();
    header.extend(["a".into(), "y".into()]);
    w.write_record(&header).unwrap();
    for i in 0..data.len() {
        let mut row: Vec<String> = data.row(i).iter().map(|v| format!("{v:?}")).collect();
        row.push(data.groups()[i].to_string());
        row.push(format!("{:?}", data.labels()[i]));
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
}

fn csv_config(path: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.dataset = DatasetSpec::Csv {
        path: path.to_path_buf(),
        schema: CsvSchema {
            features: (0..SYNTHETIC_FEATURES).map(|j| format!("x{j}")).collect(),
            label: "y".into(),
            group: "a".into(),
        },
    };
    c.bins = 5;
    c.seeds = vec![0, 1, 2];
    c
}

#[test]
fn csv_sweep_emits_reproducible_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_csv(&data, 4000, 3);
    let mut config = csv_config(&data);
    config.output.model_cache = Some(dir.path().join("models"));

    let first = run_experiment(&config).unwrap();
    assert!(first.succeeded());
    assert_eq!(first.table.seeds_completed, 3);
    assert_eq!(first.table.rows.len(), Method::ALL.len());
    let out_a = dir.path().join("a");
    let written = emit_report(&first, &out_a, true).unwrap();
    assert!(written.iter().any(|p| p.ends_with("report.txt")));
    assert!(written.iter().any(|p| p.ends_with("trace_seed0.csv")));
    assert_eq!(fs::read_dir(dir.path().join("models")).unwrap().count(), 3);

    // second run reads the cached models and must reproduce every byte
    let second = run_experiment(&config).unwrap();
    let out_b = dir.path().join("b");
    emit_report(&second, &out_b, true).unwrap();
    for name in ["report.txt", "report.json", "trace_seed0.csv"] {
        assert_eq!(
            fs::read(out_a.join(name)).unwrap(),
            fs::read(out_b.join(name)).unwrap(),
            "{name} differs between runs"
        );
    }

    let json: JsonReport =
        serde_json::from_str(&fs::read_to_string(out_a.join("report.json")).unwrap()).unwrap();
    assert_eq!(json.methods.len(), Method::ALL.len());
    for m in &json.methods {
        assert!(
            (m.marginal_coverage_x100.mean - 100.0 * m.raw.marginal_coverage.mean).abs() < 1e-9
        );
        assert!((m.mean_max_gap_x100.mean - 100.0 * m.raw.mean_max_gap.mean).abs() < 1e-9);
        assert!((m.raw.marginal_coverage.mean - 0.9).abs() < 0.05);
    }
    let trace = fs::read_to_string(out_a.join("trace_seed0.csv")).unwrap();
    assert_eq!(
        trace.lines().next(),
        Some("iteration,width,hull_width,dummy_bound")
    );
}

#[test]
fn single_method_report_has_one_entry() {
    let mut config = ExperimentConfig::desk();
    config.dataset = DatasetSpec::Synthetic {
        n: 3000,
        generator: GeneratorOptions::default(),
    };
    config.bins = 5;
    config.seeds = vec![4];
    config.methods = vec![Method::Gcqr];
    let report = run_experiment(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path(), true).unwrap();
    let json: JsonReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json.methods.len(), 1);
    assert_eq!(json.methods[0].method, Method::Gcqr);
    // no BFQR, so no optimizer trace
    assert!(!dir.path().join("trace_seed4.csv").exists());
    let text = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("GCQR")));
    assert!(!text.lines().any(|l| l.starts_with("CQR")));
}

#[test]
fn all_methods_share_split_and_model() {
    let mut config = ExperimentConfig::desk();
    config.dataset = DatasetSpec::Synthetic {
        n: 3000,
        generator: GeneratorOptions::default(),
    };
    config.bins = 5;
    config.seeds = vec![0];
    let full = run_experiment(&config).unwrap();
    config.methods = vec![Method::Cqr];
    let alone = run_experiment(&config).unwrap();
    assert_eq!(
        full.runs[0].reports[&Method::Cqr],
        alone.runs[0].reports[&Method::Cqr]
    );
}

#[test]
fn missing_csv_is_an_io_error_with_path() {
    let config = csv_config(Path::new("/nonexistent/data.csv"));
    match run_experiment(&config) {
        Err(Error::Io { path, .. }) => assert_eq!(path, Path::new("/nonexistent/data.csv")),
        other => panic!("expected an I/O error, got {other:?}"),
    }
}

#[test]
fn unwritable_output_is_an_io_error() {
    let mut config = ExperimentConfig::desk();
    config.dataset = DatasetSpec::Synthetic {
        n: 2000,
        generator: GeneratorOptions::default(),
    };
    config.bins = 4;
    config.seeds = vec![0];
    let report = run_experiment(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert!(matches!(
        emit_report(&report, &blocker.join("out"), false),
        Err(Error::Io { .. })
    ));
}
