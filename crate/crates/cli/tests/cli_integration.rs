//! End-to-end checks of the command-line contract: exit codes by failure
//! class, report emission, and a small render -> detect round trip.

use std::fs;
use std::path::Path;

use overtake_cli::{run, EXIT_IO, EXIT_OK, EXIT_VALIDATION};

fn run_args(args: &[&str]) -> i32 {
    run(std::iter::once("overtake").chain(args.iter().copied()))
}

#[test]
fn help_exits_clean() {
    assert_eq!(run_args(&["--help"]), EXIT_OK);
    assert_eq!(run_args(&["detect", "--help"]), EXIT_OK);
}

#[test]
fn unknown_flags_and_missing_args_are_validation_errors() {
    assert_eq!(run_args(&["detect", "--bogus"]), EXIT_VALIDATION);
    assert_eq!(run_args(&["simulate"]), EXIT_VALIDATION);
    assert_eq!(run_args(&["no-such-command"]), EXIT_VALIDATION);
}

#[test]
fn malformed_scenario_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    fs::write(&path, "this is not { toml").unwrap();
    assert_eq!(
        run_args(&["simulate", "--scenario", path.to_str().unwrap()]),
        EXIT_VALIDATION
    );
}

#[test]
fn invalid_risk_config_values_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("risk.toml");
    fs::write(
        &path,
        "kind = \"peak_spread\"\ndt_s = -0.05\n",
    )
    .unwrap();
    assert_eq!(
        run_args(&["risk", "--config", path.to_str().unwrap()]),
        EXIT_VALIDATION
    );
}

#[test]
fn missing_corpus_directory_is_an_io_error() {
    assert_eq!(
        run_args(&["detect", "--corpus", "/nonexistent/corpus/path"]),
        EXIT_IO
    );
}

#[test]
fn empty_corpus_directory_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run_args(&["detect", "--corpus", dir.path().to_str().unwrap()]),
        EXIT_VALIDATION
    );
}

#[test]
fn render_then_detect_round_trip_with_reports() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let render_report = dir.path().join("render.json");
    let detect_report = dir.path().join("detect.json");

    let code = run_args(&[
        "render",
        "--out-dir",
        corpus.to_str().unwrap(),
        "--frames",
        "2",
        "--seed",
        "11",
        "--noise-sigma",
        "4.0",
        "--report",
        render_report.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(corpus.join("frame_0000.pgm").is_file());
    assert!(corpus.join("frame_0001.pgm").is_file());
    assert!(
        corpus.join("frame_0000.csv").is_file(),
        "ground-truth sidecar missing"
    );
    let render = parse_report(&render_report);
    assert_eq!(render["command"], "render");
    assert_eq!(render["metrics"]["frames_written"], 2);

    let code = run_args(&[
        "detect",
        "--corpus",
        corpus.to_str().unwrap(),
        "--report",
        detect_report.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let detect = parse_report(&detect_report);
    assert_eq!(detect["command"], "detect");
    assert_eq!(detect["metrics"]["frames_total"], 2);
    assert!(detect["metrics"]["mean_ms_per_frame"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_writes_sweep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let report = dir.path().join("sim.json");
    let scenario = workspace_file("scenarios/case1.toml");

    let code = run_args(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let rep = parse_report(&report);
    assert_eq!(rep["command"], "simulate");
    let variants = rep["metrics"]["variants"].as_array().unwrap();
    assert_eq!(variants.len(), 3);
    for path in rep["outputs"].as_array().unwrap() {
        assert!(
            Path::new(path.as_str().unwrap()).is_file(),
            "listed output {path} missing"
        );
    }
}

fn parse_report(path: &Path) -> serde_json::Value {
    let text = fs::read_to_string(path).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn workspace_file(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}
