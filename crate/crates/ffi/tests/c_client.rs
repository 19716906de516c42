//! Builds a C program against the generated header and the static library and
//! checks its output against the Rust API.

use std::path::{Path, PathBuf};
use std::process::Command;

use oodcert::bounds;
use oodcert::conformal::calibrate;
use oodcert::verifier::{verify, VerificationConfig};
use oodcert::{CalibrationSet, GaussianLatentModel, KernelKind, KernelSpec, LatentVector, SampleStream};

fn profile_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

fn grid_predictor() -> oodcert::ConformalPredictor {
    let mut pts = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            pts.push(LatentVector::new(vec![0.2 * i as f64, 0.2 * j as f64]).unwrap());
        }
    }
    let cal = CalibrationSet::new(pts, "grid").unwrap();
    calibrate(cal, KernelSpec::fixed(KernelKind::Uniform, 0.25), 0.1).unwrap()
}

#[test]
fn c_client_matches_rust_api() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = profile_dir().join("liboodcert_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("client");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests/c/client.c"))
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success(), "C client failed to compile");

    let out = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "client failed: {}", String::from_utf8_lossy(&out.stderr));

    let pred = grid_predictor();
    let model = GaussianLatentModel::standard_normal(2).unwrap();
    let rep = verify(&VerificationConfig::new(&model, &pred, 20000, 0.01, SampleStream::new(7, 0))).unwrap();
    let expected = [
        format!("threshold {}", pred.threshold()),
        "safe 1 0".to_string(),
        format!("verify {} {}", rep.violations, rep.epsilon.value),
        format!(
            "adjusted {}",
            bounds::epsilon_adjusted(100_000, 4301, 1e-6, 0.0275).unwrap().value
        ),
        format!("exact {}", bounds::exact_epsilon(1000, 0, 1, 0.01).unwrap().value),
        "mismatch 2 msg".to_string(),
        "missing 6".to_string(),
        "null 1".to_string(),
    ];
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), expected.len(), "{stdout}");
    for (got, want) in lines.iter().zip(&expected) {
        let (gk, gv) = got.split_once(' ').unwrap();
        let (wk, wv) = want.split_once(' ').unwrap();
        assert_eq!(gk, wk);
        // %.17g and Rust's shortest form agree once parsed
        let parse = |s: &str| -> Vec<f64> { s.split(' ').map(|t| t.parse().unwrap_or(f64::NAN)).collect() };
        if gv.split(' ').all(|t| t.parse::<f64>().is_ok()) {
            assert_eq!(parse(gv), parse(wv), "{got} vs {want}");
        } else {
            assert_eq!(gv, wv);
        }
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/oodcert.h")).unwrap();
    let source = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20, "{exports:?}");
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for status in ["OOD_STATUS_OK = 0", "OOD_STATUS_NULL_POINTER = 1", "OOD_STATUS_PANIC = 8"] {
        assert!(header.contains(status), "{status}");
    }
}
