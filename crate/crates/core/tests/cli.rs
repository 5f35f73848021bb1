use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rvrecon::pipeline::RunManifest;

fn rvrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvrecon")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = rvrecon(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, jobs: usize) {
    ok(&[
        "synth", "--out", s(dir), "--n-scans", &n.to_string(), "--seed", "3", "--set", "duration_s=100",
        "--set", "n_roi=6", "--jobs", &jobs.to_string(),
    ]);
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn numbers(line: &str) -> Vec<f64> {
    line.split([',', ' ']).filter(|f| !f.is_empty()).map(|f| f.parse().unwrap()).collect()
}

fn data_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && l.starts_with(|c: char| c.is_ascii_digit() || c == '-'))
        .map(numbers)
        .collect()
}

#[test]
fn synth_is_reproducible_and_independent_of_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, 3, 1);
    synth(&b, 3, 1);
    synth(&c, 3, 4);
    let files = dir_bytes(&a);
    assert_eq!(files.len(), 3 * 4 + 1);
    assert_eq!(files, dir_bytes(&b));
    assert_eq!(files, dir_bytes(&c));
}

#[test]
fn synth_rejects_invalid_event() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rvrecon(&["synth", "--out", s(tmp.path()), "--set", "events=deep_breath:10:-5:2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("events"));
}

#[test]
fn rv_usage_and_constant_input() {
    let tmp = tempfile::tempdir().unwrap();
    let physio = tmp.path().join("flat.physio");
    fs::write(&physio, "5.0\n".repeat(4000)).unwrap();
    let out_path = tmp.path().join("flat.rv.csv");

    let missing = rvrecon(&["rv", "--physio", s(&physio), "--column", "0", "--out", s(&out_path)]);
    assert_eq!(missing.status.code(), Some(2));

    ok(&["rv", "--physio", s(&physio), "--column", "0", "--frames", "10", "--out", s(&out_path)]);
    let rows = data_rows(&out_path);
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r[2] == 0.0));
    assert!(PathBuf::from(format!("{}.manifest.json", s(&out_path))).exists());
}

#[test]
fn compare_reports_improvement_and_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, rows: &[(&str, f64)]| {
        let p = tmp.path().join(name);
        let mut text = String::from("scan_id,mae,mse,pearson_r,dtw\n");
        for (id, mae) in rows {
            text.push_str(&format!("{id},{mae},{},0.5,{}\n", mae * mae, mae * 10.0));
        }
        fs::write(&p, text).unwrap();
        p
    };
    let base = write("a.csv", &[("s1", 0.9), ("s2", 1.0), ("s3", 1.1)]);
    let better = write("b.csv", &[("s1", 0.77), ("s2", 0.86), ("s3", 0.95)]);
    let other = write("c.csv", &[("s1", 0.9), ("s4", 1.0), ("s3", 1.1)]);

    let same = ok(&["compare", s(&base), s(&base), "--metric", "mae"]);
    let row: Vec<&str> = same.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[3], row[4]), ("0.00", "1.0000"));

    let gain = ok(&["compare", s(&base), s(&better), "--metric", "mae"]);
    let row: Vec<&str> = gain.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], "14.00");

    let out = rvrecon(&["compare", s(&base), s(&other)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("s2") && err.contains("s4"), "{err}");
}

#[test]
fn plotdata_schema_and_values() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1, 1);
    let (physio, par, rv) = (data.join("scan000.physio"), data.join("scan000.par"), data.join("scan000.rv.csv"));
    let out = tmp.path().join("plot.csv");
    ok(&["plotdata", s(&physio), s(&par), s(&rv), "--out", s(&out)]);

    let text = fs::read_to_string(&out).unwrap();
    let header = text.lines().find(|l| l.starts_with("time_s")).unwrap();
    assert_eq!(header.split(',').count(), 15);
    let rows = data_rows(&out);
    let motion = data_rows(&par);
    let truth = data_rows(&rv);
    assert_eq!(rows.len(), truth.len());
    for ((row, m), t) in rows.iter().zip(&motion).zip(&truth) {
        assert_eq!(row.len(), 15);
        assert_eq!(row[0], t[1]);
        assert_eq!(&row[2..8], &m[..]);
        assert_eq!(row[14], t[2]);
    }

    let empty = rvrecon(&["plotdata", "--out", s(&out)]);
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn filtered_arm_records_default_band_and_scoring_ignores_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3, 1);
    let run = tmp.path().join("run");
    ok(&[
        "experiment", "--data", s(&data), "--out", s(&run), "--arm", "bold+motion-filtered", "--epochs", "2",
        "--train-stride", "8",
    ]);
    let manifest = RunManifest::read(&run.join("manifest.json")).unwrap();
    assert_eq!(manifest.config.get("arm").map(String::as_str), Some("bold+motion-filtered"));
    assert_eq!(manifest.config.get("band").map(String::as_str), Some("0.2:0.5"));

    let scores = |jobs: &str| {
        let out = tmp.path().join(format!("scores{jobs}.csv"));
        ok(&["evaluate", "--pred", s(&run.join("predictions")), "--truth", s(&data), "--out", s(&out), "--jobs", jobs]);
        fs::read(out).unwrap()
    };
    assert_eq!(scores("1"), scores("4"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(rvrecon(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(rvrecon(&[]).status.code(), Some(2));
}
