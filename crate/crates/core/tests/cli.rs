use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ergofolk::config::ExperimentConfig;
use ergofolk::pipeline::{verify_manifest, MANIFEST, REPORT};

fn ergofolk(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergofolk"))
        .args(args)
        .env("ERGOFOLK_OUT", out)
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(REPORT)).unwrap()).unwrap()
}

#[test]
fn flat_preset_stops_with_empty_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = ergofolk(&["--preset", "flat", "pipeline"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(r["status"], "empty-payoff-band");
    assert!(r["target"].is_null() && r["deviation"].is_null());
    assert!(verify_manifest(dir.path()).unwrap().is_empty());
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["--preset", "nope", "mfg"][..],
        &["--dt", "0.5", "mfg"],
        &["--delta", "soon", "mfg"],
        &["--n-cells", "4", "mfg"],
        &["--config", "/nonexistent.toml", "mfg"],
    ] {
        let out = ergofolk(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let out = ergofolk(&["--n-cells", "32", "--e", "5", "target"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selftest_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = ergofolk(&["selftest"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let again = ergofolk(&["selftest"], dir.path());
    assert_eq!(ok.stdout, again.stdout);
    let bad = ergofolk(&["selftest", "--corrupt-tolerance"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    let text = String::from_utf8_lossy(&bad.stdout);
    assert!(text.lines().any(|l| l.starts_with("FAIL") && l.contains("hjb-eigen-agreement")), "{text}");
}

#[test]
fn mfg_subcommand_writes_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = ergofolk(&["--n-cells", "64", "mfg"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["lambda0"].as_f64().unwrap() < 0.0);
    assert!(dir.path().join("u0.csv").exists() && dir.path().join("mu0.csv").exists());
}

#[test]
fn reduced_pipeline_bundle_is_complete_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "--n-cells", "32", "--horizon", "20", "--burn-in", "2", "--grace", "5", "--n-runs", "3", "--dt", "0.005",
        "--n-players", "4", "pipeline",
    ];
    let ra = ergofolk(&args, a.path());
    let rb = ergofolk(&args, b.path());
    assert!(matches!(ra.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&ra.stderr));
    assert_eq!(ra.status.code(), rb.status.code());

    assert!(verify_manifest(a.path()).unwrap().is_empty());
    let r = report(a.path());
    for name in r["artifacts"].as_array().unwrap() {
        assert!(a.path().join(name.as_str().unwrap()).exists(), "{name}");
    }
    for name in ["deviation.csv", "sweep.csv", "simulate.csv", "simulate_runs.jsonl", MANIFEST] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let line: serde_json::Value = serde_json::from_str(
        fs::read_to_string(a.path().join("simulate_runs.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    for key in ["run", "player", "payoff", "theta"] {
        assert!(line.get(key).is_some(), "{key}");
    }

    // the resolved config replays the same plan
    let resolved = ExperimentConfig::load(&a.path().join("resolved_config.toml")).unwrap();
    assert!(resolved.delta.value().is_some() && resolved.n_penalization.value().is_some());
    let c = tempfile::tempdir().unwrap();
    let cfg_path = c.path().join("cfg.toml");
    fs::write(&cfg_path, resolved.to_toml().unwrap()).unwrap();
    let rc = ergofolk(&["--config", cfg_path.to_str().unwrap(), "pipeline"], c.path());
    assert_eq!(rc.status.code(), ra.status.code());
    assert_eq!(
        fs::read(a.path().join("deviation.csv")).unwrap(),
        fs::read(c.path().join("deviation.csv")).unwrap()
    );

    fs::write(a.path().join("sweep.csv"), "tampered").unwrap();
    assert_eq!(verify_manifest(a.path()).unwrap(), vec!["sweep.csv".to_string()]);
}
