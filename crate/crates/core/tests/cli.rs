use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lobflux(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lobflux"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("LOBFLUX_LOG", "error")
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("error is JSON")
}

#[test]
fn validate_writes_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lobflux(
        tmp.path(),
        &[
            "validate",
            "--set",
            "model.preset=\"table_bid\"",
            "--set",
            "sim.seed=1",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["report.json", "resolved_config.toml", "versions.json"] {
        assert!(tmp.path().join(f).exists(), "missing {f}");
    }
    let r = report(tmp.path());
    assert_eq!(r["command"], "validate");
    assert_eq!(r["passed"], true);
}

#[test]
fn missing_seed_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lobflux(tmp.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(1));
    let e = stderr_json(&out);
    assert_eq!(e["schema_version"], 1);
    assert!(e["error"]["message"].as_str().unwrap().contains("seed"));
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lobflux(tmp.path(), &["validate", "--set", "sim.sede=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["error"]["kind"].is_string());
}

#[test]
fn bad_paths_directory_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = lobflux(
        tmp.path(),
        &[
            "fluctuations",
            "--set",
            "sim.seed=1",
            "--paths",
            missing.to_str().unwrap(),
            "--first-order",
            missing.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let kind = stderr_json(&out)["error"]["kind"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(kind == "io" || kind == "csv", "{kind}");
}

#[test]
fn simulate_is_reproducible() {
    let run = |seed: u64| {
        let tmp = tempfile::tempdir().unwrap();
        let set = format!("sim.seed={seed}");
        let out = lobflux(
            tmp.path(),
            &["simulate", "--set", &set, "--set", "sim.n_paths=50"],
        );
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let summary = fs::read(tmp.path().join("ensemble_summary.json")).unwrap();
        let prices = fs::read(tmp.path().join("path_0").join("prices.csv")).unwrap();
        (summary, prices)
    };
    let a = run(7);
    assert_eq!(a, run(7));
    assert_ne!(a.0, run(8).0);
}

#[test]
fn fluctuations_from_written_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (sim_dir, fo_dir, fl_dir) = (
        tmp.path().join("sim"),
        tmp.path().join("fo"),
        tmp.path().join("fl"),
    );
    let seed = ["--set", "sim.seed=11"];
    let out = lobflux(
        &sim_dir,
        &[
            "simulate",
            seed[0],
            seed[1],
            "--set",
            "sim.n_paths=20",
            "--set",
            "sim.write_paths=20",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let out = lobflux(&fo_dir, &["first-order", seed[0], seed[1]]);
    assert_eq!(out.status.code(), Some(0));
    assert!(fo_dir.join("solution.csv").exists());
    let out = lobflux(
        &fl_dir,
        &[
            "fluctuations",
            seed[0],
            seed[1],
            "--paths",
            sim_dir.to_str().unwrap(),
            "--first-order",
            fo_dir.to_str().unwrap(),
            "--test-fns",
            "bump:-0.2:0.1,indicator:-0.5:0",
        ],
    );
    assert!(
        matches!(out.status.code(), Some(0 | 1)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stats = fs::read_to_string(fl_dir.join("fluctuation_stats.csv")).unwrap();
    assert!(stats.lines().count() > 1);
}

#[test]
fn second_order_modes_write_covariance() {
    for mode in ["simplified", "spectral"] {
        let tmp = tempfile::tempdir().unwrap();
        let out = lobflux(
            tmp.path(),
            &[
                "second-order",
                "--mode",
                mode,
                "--set",
                "sim.seed=5",
                "--set",
                "second_order.n_paths=200",
                "--set",
                "second_order.modes=8",
            ],
        );
        assert!(
            matches!(out.status.code(), Some(0 | 1)),
            "{mode}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(tmp.path().join("covariance.csv").exists(), "{mode}");
        assert_eq!(report(tmp.path())["command"], "second-order");
    }
}

#[test]
fn calibrate_and_correlate_on_synthetic_sessions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lobflux(tmp.path(), &["calibrate", "--set", "sim.seed=3"]);
    assert!(
        matches!(out.status.code(), Some(0 | 1)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fits: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("fits_bid.json")).unwrap())
            .unwrap();
    assert!(fits.is_object());

    let tmp = tempfile::tempdir().unwrap();
    let out = lobflux(
        tmp.path(),
        &[
            "correlate",
            "--set",
            "sim.seed=3",
            "--set",
            "calibration.n_windows=20",
        ],
    );
    assert!(
        matches!(out.status.code(), Some(0 | 1)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(tmp.path().join("correlation_report.csv").exists());
}

#[test]
fn convergence_study_reports_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lobflux(
        tmp.path(),
        &[
            "convergence-study",
            "--set",
            "sim.seed=9",
            "--set",
            "study.n_paths=60",
            "--set",
            "study.base_delta=0.005",
            "--set",
            "study.checkpoints=4",
            "--set",
            "second_order.modes=8",
        ],
    );
    assert!(
        matches!(out.status.code(), Some(0 | 1)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = report(tmp.path());
    let text = r["report"].to_string();
    for id in [
        "lln_rate",
        "price_variance",
        "martingales",
        "micro_to_limit",
    ] {
        assert!(text.contains(id), "missing {id}");
    }
}
