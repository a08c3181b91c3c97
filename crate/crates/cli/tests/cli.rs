use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mzi-ncoinc");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Data rows of a CSV as numbers, skipping comments and the header.
fn rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

#[test]
fn predict_writes_four_orders_on_360_points() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["predict", "--nmax", "4", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("predict.csv")).unwrap();
    assert!(text.starts_with("# mzi-ncoinc predict v1\n"));
    assert!(text.contains("phase_rad,intensity_n1,intensity_n2,intensity_n3,intensity_n4"));
    let r = rows(&text);
    assert_eq!(r.len(), 360);
    // endpoints sit on the maxima at +-2 pi
    assert!((r[0][1] - 1.0).abs() < 1e-12);
    let max = r.iter().map(|x| x[1]).fold(0.0, f64::max);
    assert!((max - 1.0).abs() < 1e-12);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn predict_cross_has_zeros_on_the_axis() {
    let o = run(&["predict", "--topology", "cross", "--n", "4", "--steps", "5", "--range", "3.141592653589793"]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    let values: Vec<f64> = r.iter().map(|x| x[1]).collect();
    for i in [0, 2, 4] {
        assert!(values[i].abs() < 1e-12, "{values:?}");
    }
    assert!((values[1] - 1.0).abs() < 1e-12 && (values[3] - 1.0).abs() < 1e-12);
}

#[test]
fn fwhm_table_matches_closed_form() {
    let o = run(&["predict", "--fwhm-table"]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    let widths: Vec<f64> = r.iter().map(|x| x[1]).collect();
    let quoted = [3.14, 2.28, 1.88, 1.64];
    for (w, q) in widths.iter().zip(quoted) {
        assert!((w - q).abs() < 0.01, "{w} vs {q}");
    }
    assert!((widths[0] - std::f64::consts::PI).abs() < 1e-12);
    // cross width for n = 4
    assert!((r[3][4] - 1.143_717_740_402_42).abs() < 1e-9);
}

#[test]
fn analyze_recovers_widths_from_a_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(run(&["predict", "--nmax", "4", "--out", d]).status.success());
    let input = dir.path().join("predict.csv");
    let o = run(&["analyze", "--input", input.to_str().unwrap(), "--out", d]);
    assert!(o.status.success(), "{}", stdout(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("analysis.json")).unwrap()).unwrap();
    let first = &report["entries"][0];
    assert_eq!(first["order"], 1);
    let w = first["measured_fwhm"].as_f64().unwrap();
    assert!((w - std::f64::consts::PI).abs() < 2e-3, "{w}");
    assert_eq!(report["ratios"].as_array().unwrap().len(), 4);
    assert_eq!(report["pass"], true);
}

fn simulate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), &["--n", "2", "--steps", "72", "--dwell", "20ms", "--seed", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = dir.path().join("scan.csv");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("# mzi-ncoinc scan v1\n"));
    assert!(text.contains("\nphase_rad,raw_value,stat_error,normalized_value\n"));
    assert!(text.contains("# config: master_seed = 7"));
    assert_eq!(rows(&text).len(), 72);

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 7);
    assert_eq!(summary["singles_rates"].as_array().unwrap().len(), 2);
    assert!(summary["created_unix"].as_u64().is_some());

    let input = csv.to_str().unwrap();
    let good = run(&["analyze", "--input", input]);
    assert_eq!(good.status.code(), Some(0), "{}", stdout(&good));
    // the same data read as a four-photon fringe fails
    let wrong = run(&["analyze", "--input", input, "--n", "4"]);
    assert_eq!(wrong.status.code(), Some(1), "{}", stdout(&wrong));
    assert!(stdout(&wrong).contains("FAIL"));
}

#[test]
fn first_order_peak_matches_rate_times_dwell() {
    // default detectors and tree; a single detector sees R dwell cos^2(phi/2)
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), &["--n", "1", "--steps", "3", "--range", "-0.01:0.01", "--seed", "3"]);
    assert!(o.status.success());
    let r = rows(&fs::read_to_string(dir.path().join("scan.csv")).unwrap());
    let counts = r[1][1];
    let incident = 2.0e7 * 0.1 + 50.0 * 0.1;
    // non-paralyzable dead time of 350 ps
    let expect = incident / (1.0 + 2.0e7 * 350e-12);
    assert!((counts - expect).abs() < 5.0 * expect.sqrt(), "{counts} vs {expect}");
}

#[test]
fn seeded_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--n", "3", "--steps", "30", "--dwell", "5ms", "--seed", "42"];
    assert!(simulate(a.path(), &args).status.success());
    assert!(simulate(b.path(), &args).status.success());
    let x = fs::read(a.path().join("scan.csv")).unwrap();
    let y = fs::read(b.path().join("scan.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn apd_mode_records_thirty_repetitions() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(
        dir.path(),
        &["--mode", "apd", "--averages", "30", "--n", "2", "--steps", "4", "--dwell", "20us", "--rate", "1e10"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["repetitions"], 30);
    let text = fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    assert!(text.contains("repetitions: 30"));
}

#[test]
fn event_dump_is_time_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), &["--n", "2", "--steps", "4", "--dwell", "10us", "--dump-point", "1"]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("events_point1.csv")).unwrap();
    let r = rows(&text);
    assert!(!r.is_empty());
    assert!(r.windows(2).all(|w| w[0][0] <= w[1][0]));
    assert!(r.iter().all(|x| x[1] == 0.0 || x[1] == 1.0 || x[1] == -1.0));
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scan.toml");
    fs::write(
        &cfg,
        "steps = 10\ndwell_ps = 1000000000\nmaster_seed = 5\n[coincidence]\norder = 2\nwindow_ps = 6000\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("scan.csv")).unwrap();
    assert!(text.contains("# config: master_seed = 9"));
    assert_eq!(rows(&text).len(), 10);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "steps = 1\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("steps"));

    fs::write(&cfg, "[beam]\nrate = -1.0\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("beam.rate"));

    let o = run(&["simulate", "--topology", "cross", "--n", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["predict", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_reports_missing_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "# mzi-ncoinc scan v1\nphase_rad,raw_value\n0,1\n1,0.5\n").unwrap();
    let o = run(&["analyze", "--input", path.to_str().unwrap(), "--n", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stat_error") && err.contains("normalized_value"), "{err}");
}

#[test]
fn quick_validation_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate", "--quick", "--out", dir.path().to_str().unwrap()]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    for k in 1..=8 {
        assert!(text.contains(&format!("[PASS] criterion {k}:")), "{text}");
    }
    assert!(text.contains("width tolerance 10%"));
    assert!(dir.path().join("validation.json").exists());
}

#[test]
fn long_dead_time_warns_and_fails() {
    let o = run(&["validate", "--quick", "--dead-time-ps", "10000000"]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(1), "{text}");
    assert!(text.contains("warning:") && text.contains("satur"), "{text}");
}
