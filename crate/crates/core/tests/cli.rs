use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resdmd::snapshot::encode_csv;
use resdmd::spectral::filter_modes;
use resdmd::{exact_dmd, synthetic};
use serde_json::Value;

fn resdmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resdmd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_pairs(dir: &Path) -> (PathBuf, PathBuf, resdmd::SnapshotPairs) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs = synthetic::nonlinear_pairs(4, 40, 0.1, &mut rng);
    let x = dir.join("x.csv");
    let y = dir.join("y.csv");
    std::fs::write(&x, encode_csv(pairs.x())).unwrap();
    std::fs::write(&y, encode_csv(pairs.y())).unwrap();
    (x, y, pairs)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = resdmd(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[usage]"));
}

#[test]
fn missing_input_exits_with_validation_code() {
    let out = resdmd(&["dmd", "--input", "/nonexistent/x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error["));
}

#[test]
fn malformed_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y, _) = write_pairs(dir.path());
    let out = resdmd(&["pseudospec", "--input", s(&x), "--input-y", s(&y), "--grid", "1:2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dmd_output_is_deterministic_json() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y, _) = write_pairs(dir.path());
    let args = ["dmd", "--input", s(&x), "--input-y", s(&y), "--rank", "3"];
    let a = resdmd(&args);
    let b = resdmd(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["rank"], 3);
}

#[test]
fn validate_matches_library_filter() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y, pairs) = write_pairs(dir.path());
    let out = resdmd(&[
        "validate", "--input", s(&x), "--input-y", s(&y), "--rank", "4", "--epsilon", "0.05",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let kept: Vec<usize> = serde_json::from_value(v["kept"].clone()).unwrap();
    let res = exact_dmd(&pairs, Some(4)).unwrap();
    assert_eq!(kept, filter_modes(&res.residuals, 0.05).unwrap());
}

#[test]
fn pseudospec_csv_has_one_row_per_imaginary_value() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y, _) = write_pairs(dir.path());
    let out_path = dir.path().join("tau.csv");
    let out = resdmd(&[
        "pseudospec", "--input", s(&x), "--input-y", s(&y), "--grid", "-1:1:7,-0.5:0.5:3", "--output",
        s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let tau = resdmd::snapshot::parse_csv(&std::fs::read(&out_path).unwrap()).unwrap();
    assert_eq!((tau.nrows(), tau.ncols()), (3, 7));
}

#[test]
fn embed_reports_snapshot_count() {
    let dir = tempfile::tempdir().unwrap();
    let series = Mat::from_fn(4, 30, |i, t| ((i + t) as f64 * 0.2).sin());
    let input = dir.path().join("series.csv");
    std::fs::write(&input, encode_csv(series.as_ref())).unwrap();
    let (ox, oy) = (dir.path().join("ex.csv"), dir.path().join("ey.csv"));
    let out = resdmd(&[
        "embed", "--input", s(&input), "--delay", "5", "--output", s(&ox), "--output-y", s(&oy),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["snapshots"], 4 * (30 - 5));
    let ex = resdmd::snapshot::parse_csv(&std::fs::read(&ox).unwrap()).unwrap();
    assert_eq!((ex.nrows(), ex.ncols()), (5, 100));
}

#[test]
fn selftest_succeeds() {
    let out = resdmd(&["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("12/12 checks passed"));
}
