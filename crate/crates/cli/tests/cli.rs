use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn lasalle(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_lasalle")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

const EXAMPLE1: &str = r#"{
  "system": {"corpus": "example1"},
  "certificate": {"v": "x2^2", "w": "-2*x2^4"},
  "hypotheses": {"radius": 1.0, "samples": 2000},
  "seed": 7
}"#;

#[test]
fn hypotheses_on_example1_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EXAMPLE1);
    let out = dir.path().join("out");
    let (code, err) = lasalle(&["hypotheses", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let r = report(&out, "hypotheses.json");
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["seed"], 7);
    assert_eq!(r["config_hash"], lasalle_cli::config::config_hash(EXAMPLE1));
    for h in ["h1", "h2", "h3"] {
        assert_eq!(r["report"][h]["status"], "pass", "{h}");
    }
    assert!(r["tolerances"]["h2"].is_number());
}

#[test]
fn failing_check_exits_one_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"system": {"corpus": "example1"}, "certificate": {"v": "x1^2", "w": "0"}, "hypotheses": {"radius": 1.0, "samples": 500}}"#,
    );
    let out = dir.path().join("out");
    let (code, _) = lasalle(&["hypotheses", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1);
    let r = report(&out, "hypotheses.json");
    assert_eq!(r["passed"], false);
    assert!(r["report"]["h2"]["witness"]["x"].is_array());
}

#[test]
fn malformed_config_exits_two_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{\n  \"seed\": 1,\n  \"system\" {}\n}");
    let (code, err) = lasalle(&["hypotheses", "--config", &cfg]);
    assert_eq!(code, 2);
    assert!(err.contains("config.json:3:"), "{err}");
}

#[test]
fn bad_expression_exits_two_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "{\n  \"system\": {\"corpus\": \"example1\"},\n  \"certificate\": {\"v\": \"x2^2 * (\", \"w\": \"0\"}\n}",
    );
    let (code, err) = lasalle(&["hypotheses", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("config.json:3:"), "{err}");
}

#[test]
fn negative_override_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EXAMPLE1);
    let (code, err) = lasalle(&["simulate", "--config", &cfg, "--horizon", "-1"]);
    assert_eq!(code, 2, "{err}");
    let (code, _) = lasalle(&["detect"]);
    assert_eq!(code, 2);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EXAMPLE1);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let (code, err) = lasalle(&["hypotheses", "--config", &cfg, "--out", d.to_str().unwrap(), "--seed", "11"]);
        assert_eq!(code, 0, "{err}");
    }
    let ra = std::fs::read(a.join("hypotheses.json")).unwrap();
    let rb = std::fs::read(b.join("hypotheses.json")).unwrap();
    assert_eq!(ra, rb);
    let (code, _) = lasalle(&["hypotheses", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "12"]);
    assert_eq!(code, 0);
    assert_ne!(ra, std::fs::read(b.join("hypotheses.json")).unwrap());
}

#[test]
fn simulate_writes_trajectory_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"system": {"corpus": "example2"}, "certificate": {"v": "x2^2/2", "w": "-x2^4"},
            "starts": {"points": [[0.5, 0.5], [-0.2, 0.1]], "t0_grid": [0, 3]}}"#,
    );
    let out = dir.path().join("out");
    let (code, err) = lasalle(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--horizon", "20"]);
    assert_eq!(code, 0, "{err}");
    let r = report(&out, "simulate.json");
    assert_eq!(r["report"]["runs"].as_array().unwrap().len(), 4);
    assert_eq!(r["horizons"]["horizon"], 20.0);
    let series = std::fs::read_to_string(out.join("traj_000_01_series.csv")).unwrap();
    assert!(series.starts_with("t,norm,v\n"));
    let traj = std::fs::read_to_string(out.join("traj_001_00.csv")).unwrap();
    assert!(traj.starts_with("t,x1,x2\n"));
}

#[test]
fn invariance_writes_sets_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"system": {"corpus": "example2"}, "certificate": {"v": "x2^2/2", "w": "-x2^4"},
            "starts": {"count": 4, "radius": 0.5}, "invariance": {"zero_set_budget": 40}}"#,
    );
    let out = dir.path().join("out");
    let (code, _) = lasalle(&["invariance", "--config", &cfg, "--out", out.to_str().unwrap()]);
    // tail distances to N decay like t^(-1/2), far above the solver tolerances
    assert_eq!(code, 1);
    for f in ["E.csv", "N.csv", "omega.csv", "distance_000.csv", "invariance.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let r = report(&out, "invariance.json");
    assert_eq!(r["report"]["n"]["label"], "N");
    assert_eq!(r["report"]["starts"].as_array().unwrap().len(), 4);
}

#[test]
fn detect_on_example2_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"system": {"corpus": "example2"}, "certificate": {"v": "x2^2/2", "w": "-x2^4"},
            "detect": {"eps0": 0.5, "residual_samples": 2000}, "invariance": {"zero_set_budget": 60}}"#,
    );
    let out = dir.path().join("out");
    let (code, err) = lasalle(&["detect", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let r = report(&out, "detect.json");
    assert_eq!(r["report"]["detectability"]["strong_zsd"]["status"], "pass");
    assert_eq!(r["report"]["stability"]["status"], "stable");
    assert_eq!(r["horizons"]["attractivity"], 1e4);
}

#[test]
fn robust_on_example3_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"system": {"corpus": "example3"}, "certificate": {"v": "x2^4", "w": "-4*x2^6"},
            "robust": {"class": "P2", "gain_a": 2, "margin_eps": 0.5, "family_size": 3, "stability_horizon": 30}}"#,
    );
    let out = dir.path().join("out");
    let (code, err) = lasalle(&["robust", "--config", &cfg, "--out", out.to_str().unwrap(), "--horizon", "2000", "--tol", "0.1"]);
    assert_eq!(code, 0, "{err}");
    let r = report(&out, "robust.json");
    let m = r["report"]["members"].as_array().unwrap();
    assert_eq!(m.len(), 3);
    for rec in m {
        for key in ["perturbation_id", "class", "sector_check", "stability", "attractivity", "worst_h2_slack"] {
            assert!(rec.get(key).is_some(), "{key}");
        }
    }
    assert_eq!(r["report"]["h2_chain_held"], true);
}

#[test]
fn robust_rejects_invalid_margin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"system": {"corpus": "example3"}, "certificate": {"v": "x2^4", "w": "0"},
            "robust": {"class": "P2", "gain_a": 1, "margin_eps": 2}}"#,
    );
    assert_eq!(lasalle(&["robust", "--config", &cfg]).0, 2);
}

#[test]
fn corpus_verify_clean_build_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (code, err) = lasalle(&["corpus-verify", "--out", out.to_str().unwrap()]);
    let r = report(&out, "corpus-verify.json");
    let criteria = r["report"]["criteria"].as_array().unwrap();
    assert_eq!(criteria.len(), 8);
    assert_eq!(err.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count(), 8);
    assert_eq!(code == 0, r["passed"] == true);
    assert_eq!(code, 0, "{err}");
}
