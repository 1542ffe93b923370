//! End-to-end runs of the `lab` binary.

use std::path::Path;
use std::process::{Command, Output};

use henon_lab::lab::{cached_boundary, RunManifest, Summary};
use henon_lab::renorm2d::boundary_of_chaos_param;
use henon_lab::Precision;

fn lab(dir: &Path, command: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{command}.cfg"));
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_lab"))
        .current_dir(dir)
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .args(extra)
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn ladder_two_levels() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lab(tmp.path(), "ladder", "levels = 2\n", &["--out", "l"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let mut rd = csv::Reader::from_path(tmp.path().join("l/ladder.csv")).unwrap();
    assert_eq!(rd.headers().unwrap().iter().take(2).collect::<Vec<_>>(), ["level", "a_n"]);
    let rows: Vec<(usize, f64)> = rd
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], (0, 0.0));
    assert_eq!(rows[1], (1, -1.0));
    assert_eq!(rows[2].0, 2);
    assert!((rows[2].1 + 1.3107026).abs() < 1e-7);
    let m = manifest(&tmp.path().join("l"));
    assert!(m.passed);
    assert_eq!(m.config_hash.len(), 64);
    assert!(m.outputs.contains(&"ladder.csv".to_string()));
}

#[test]
fn pliss_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "trials = 10\nN = 50\nexhaustive_len = 6\n";
    let a = lab(tmp.path(), "pliss", cfg, &["--out", "a", "--seed", "7"]);
    let b = lab(tmp.path(), "pliss", cfg, &["--out", "b", "--seed", "7"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("pliss.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let (ma, mb) = (manifest(&tmp.path().join("a")), manifest(&tmp.path().join("b")));
    assert_eq!(ma.metrics, mb.metrics);
    assert_eq!(ma.config_hash, mb.config_hash);
    let c = lab(tmp.path(), "pliss", cfg, &["--out", "c", "--seed", "8"]);
    assert_eq!(c.status.code(), Some(0));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn degenerate_tower_reports_minus_infinity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lab(tmp.path(), "tower", "b = 0\nN = 3\n", &["--out", "t"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let mut rd = csv::Reader::from_path(tmp.path().join("t/tower.csv")).unwrap();
    assert_eq!(&rd.headers().unwrap()[2], "log_delta_n (ln)");
    let logs: Vec<String> = rd.records().map(|r| r.unwrap()[2].to_string()).collect();
    assert_eq!(logs, ["-inf", "-inf", "-inf"]);
    let m = manifest(&tmp.path().join("t"));
    assert_eq!(m.metrics["log_delta_n"], serde_json::json!(["-inf", "-inf", "-inf"]));
}

#[test]
fn config_errors_are_json_with_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lab(tmp.path(), "ladder", "levels = 3\ncolour = blue\n", &["--out", "bad"]);
    assert_eq!(out.status.code(), Some(2));
    let payload: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(payload["error"], "ConfigError");
    assert!(payload["message"].as_str().unwrap().contains("colour"));
    assert!(tmp.path().join("bad/error.json").exists());

    let out = lab(tmp.path(), "ladder", "levels = 3\n", &["--precision", "quad"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn module_errors_map_to_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lab(tmp.path(), "boundary", "b = 0.3\n", &["--out", "o"]);
    assert_eq!(out.status.code(), Some(4));
    let payload: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(payload["error"], "ContinuationError");
}

#[test]
fn report_aggregates_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lab(tmp.path(), "report", "", &["--out", "empty"]);
    assert_eq!(out.status.code(), Some(0));
    let s: Summary = serde_json::from_slice(&std::fs::read(tmp.path().join("empty/summary.json")).unwrap()).unwrap();
    assert_eq!(s.criteria_evaluated, 0);
    assert!(s.runs.is_empty());

    let out = lab(tmp.path(), "ladder", "levels = 8\n", &["--out", "runs/ladder"]);
    assert_eq!(out.status.code(), Some(0));
    let out = lab(tmp.path(), "report", "inputs = runs\n", &["--out", "runs/report"]);
    assert_eq!(out.status.code(), Some(0));
    let s: Summary =
        serde_json::from_slice(&std::fs::read(tmp.path().join("runs/report/summary.json")).unwrap()).unwrap();
    assert_eq!(s.runs.len(), 1);
    assert_eq!(s.ratio_table.len(), 7);
    let ids: Vec<u32> = s.criteria.iter().map(|c| c.id).collect();
    assert_eq!(ids, [1, 11]);
    assert!(s.criteria.iter().all(|c| c.pass));
    let table = std::fs::read_to_string(tmp.path().join("runs/report/summary.txt")).unwrap();
    assert!(table.contains("feigenbaum_ratio"));

    // rerunning the report skips its own manifest
    let out = lab(tmp.path(), "report", "inputs = runs\n", &["--out", "runs/report"]);
    assert_eq!(out.status.code(), Some(0));
    let m = manifest(&tmp.path().join("runs/report"));
    assert_eq!(m.metrics["runs"], 1);

    let out = lab(tmp.path(), "report", "inputs = nowhere\n", &["--out", "r2"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn boundary_cache_matches_recomputation() {
    let tmp = tempfile::tempdir().unwrap();
    let (first, hit) = cached_boundary(tmp.path(), 0.1, 6, Precision::Standard).unwrap();
    assert!(!hit);
    let (second, hit) = cached_boundary(tmp.path(), 0.1, 6, Precision::Standard).unwrap();
    assert!(hit);
    let fresh = boundary_of_chaos_param(0.1, 6, Precision::Standard).unwrap();
    assert!((second.a_star - fresh.a_star).abs() <= 1e-12);
    assert_eq!(first, second);
    let entries: Vec<_> = std::fs::read_dir(tmp.path().join("boundary")).unwrap().collect();
    assert_eq!(entries.len(), 1);

    let out = lab(tmp.path(), "boundary", "b = 0.1\nmax_level = 6\ncache_dir = .\n", &["--out", "bd"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(manifest(&tmp.path().join("bd")).metrics["cache_hit"], true);
}
