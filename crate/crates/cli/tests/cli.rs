//! End-to-end runs of the `uaudit` binary on a small synthetic dataset.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn uaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uaudit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_dataset(dir: &Path) -> PathBuf {
    let mut csv = String::from("x1,x2,colour,label\n");
    for i in 0..400u32 {
        let x1 = (i * 37 % 101) as f64 / 10.0;
        let x2 = (i * 53 % 97) as f64 / 10.0;
        let colour = ["red", "green", "blue"][(i % 3) as usize];
        let label = if x1 + x2 + (i % 7) as f64 > 13.0 { "yes" } else { "no" };
        writeln!(csv, "{x1},{x2},{colour},{label}").unwrap();
    }
    let path = dir.join("toy.csv");
    std::fs::write(&path, csv).unwrap();
    path
}

fn write_config(dir: &Path, dataset: &str) -> PathBuf {
    let farm = r#"{
        "n_originals": 2,
        "samples_per_original": 40,
        "n_unlearned_per_original": 4,
        "model_kind": "decision_tree"
    }"#;
    let config = format!(
        r#"{{
        "dataset": {{ "path": "{dataset}", "label_column": "label", "categorical_columns": ["colour"] }},
        "seed": 7,
        "target_farm": {farm},
        "shadow_farm": {farm},
        "attack_kinds": ["decision_tree"],
        "feature_methods": ["sorted_diff", "euc_dist"],
        "defense": "none"
    }}"#
    );
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    path
}

fn setup() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    write_dataset(dir.path());
    let config = write_config(dir.path(), "toy.csv");
    (dir, config)
}

#[test]
fn run_writes_a_parseable_record_and_report_renders_csv() {
    let (dir, config) = setup();
    let result = dir.path().join("out/result.json");
    let out = uaudit(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--workers",
        "2",
        "--output",
        result.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record: serde_json::Value = serde_json::from_slice(&std::fs::read(&result).unwrap()).unwrap();
    assert_eq!(record["rows"].as_array().unwrap().len(), 2);

    let out = uaudit(&["report", result.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.split(',').count() == 9));
}

#[test]
fn run_is_reproducible_with_a_cache() {
    let (dir, config) = setup();
    let cache = dir.path().join("cache");
    let run = |workers: &str| {
        let out = uaudit(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--workers",
            workers,
            "--cache-dir",
            cache.to_str().unwrap(),
            "--format",
            "csv",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let first = run("1");
    assert!(std::fs::read_dir(&cache).unwrap().next().is_some());
    assert_eq!(first, run("3"));
}

#[test]
fn prepare_emits_disjoint_pools() {
    let (_dir, config) = setup();
    let out = uaudit(&["prepare", "--config", config.to_str().unwrap(), "--seed", "11"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let mut seen = std::collections::HashSet::new();
    let mut total = 0;
    for key in ["target_positive", "target_negative", "shadow_positive", "shadow_negative"] {
        let pool = manifest[key].as_array().unwrap();
        assert!(!pool.is_empty());
        total += pool.len();
        seen.extend(pool.iter().map(|v| v.as_u64().unwrap()));
    }
    assert_eq!(seen.len(), total);
    assert_eq!(total, 400);
}

#[test]
fn bad_config_exits_with_one() {
    let (dir, _) = setup();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"dataset": 3}"#).unwrap();
    let out = uaudit(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_exits_with_one() {
    assert_eq!(uaudit(&["run", "--bogus"]).status.code(), Some(1));
}

#[test]
fn missing_dataset_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "absent.csv");
    let out = uaudit(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
