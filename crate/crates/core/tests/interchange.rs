//! Files shaped like the VAE exporter's bundle go through `calibrate` and `verify`.

use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn oodcert(args: &[&str]) -> Value {
    let out = Command::new(env!("CARGO_BIN_EXE_oodcert")).args(args).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Deterministic stand-in for encoder means: a skewed point cloud in 4-D.
fn encodings(n: usize) -> String {
    let mut csv = String::from("dim=4\n");
    let mut s: u64 = 0x9e3779b97f4a7c15;
    for _ in 0..n {
        let mut row = Vec::new();
        for j in 0..4 {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            let u = (s >> 11) as f64 / (1u64 << 53) as f64;
            row.push(format!("{}", (u - 0.5) * (1.0 + j as f64 * 0.5)));
        }
        let _ = writeln!(csv, "{}", row.join(","));
    }
    csv
}

#[test]
fn exporter_bundle_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("prior_model.json"),
        r#"{"dim": 4, "mean": [0.0, 0.0, 0.0, 0.0], "cov_type": "diag", "cov": [1.0, 1.0, 1.0, 1.0], "label": "prior"}"#,
    )
    .unwrap();
    std::fs::write(
        d.join("aggregate_model.json"),
        r#"{"dim": 4, "mean": [0.01, -0.02, 0.0, 0.03], "cov_type": "diag",
            "cov": [0.083, 0.188, 0.333, 0.52], "label": "aggregate_posterior"}"#,
    )
    .unwrap();
    std::fs::write(d.join("calibration.csv"), encodings(200)).unwrap();

    let cal = oodcert(&[
        "calibrate",
        "--calibration",
        p(&d.join("calibration.csv")),
        "--beta",
        "0.0275",
        "--kernel",
        "gaussian",
        "--out",
        p(&d.join("predictor.json")),
    ]);
    assert_eq!(cal["calibration_size"], 200);

    for model in ["prior_model.json", "aggregate_model.json"] {
        let rep = oodcert(&[
            "verify",
            "--model",
            p(&d.join(model)),
            "--predictor",
            p(&d.join("predictor.json")),
            "--n",
            "5000",
            "--delta",
            "0.01",
        ]);
        let r = rep["violations"].as_u64().unwrap();
        assert!(r <= 5000);
        let eps = rep["epsilon"]["value"].as_f64().unwrap();
        assert!(eps > 0.0 && eps <= 1.0, "{model}: {eps}");
    }
}
