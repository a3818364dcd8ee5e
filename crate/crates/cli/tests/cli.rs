use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const IDENTITY: &str = "{ n = 1, entries = [1.0, 0.0, 0.0, 1.0], lambda = 1.0, Lambda = 1.0 }";

fn heis(dir: &Path, sub: &str, config: &str, extra: &[&str]) -> Output {
    let path = dir.join(format!("{sub}.toml"));
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_heis"))
        .arg(sub)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn rows(dir: &Path, file: &str) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("out").join(file)).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# generated"));
    lines.skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn log(dir: &Path, sub: &str) -> Value {
    let text = std::fs::read_to_string(dir.join("out").join(format!("{sub}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn verify_identities_for_identity_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let out = heis(dir.path(), "verify-identities", &format!("[verify-identities]\nmatrix = {{ matrix = {IDENTITY} }}\n"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = rows(dir.path(), "verify-identities.csv");
    assert_eq!(table.len(), 11);
    assert_eq!(table[0][0], "given");
    assert!(table[0][4].parse::<f64>().unwrap() <= 1e-10);
    assert!(table.iter().all(|r| r[6] == "true"));
    let l = log(dir.path(), "verify-identities");
    assert_eq!(l["schema_version"], 1);
    assert_eq!(l["pass"], true);
}

#[test]
fn alpha_for_identity_agrees_across_radii() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("[alpha]\nmatrix = {{ matrix = {IDENTITY} }}\nradii = [0.5, 1.0, 2.0]\nsamples = 20000\n");
    let out = heis(dir.path(), "alpha", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = rows(dir.path(), "alpha.csv");
    assert_eq!(table.len(), 3);
    let v: Vec<(f64, f64)> = table
        .iter()
        .map(|r| (r[2].parse().unwrap(), r[3].parse().unwrap()))
        .collect();
    for (a, e) in &v {
        assert!((a - v[1].0).abs() <= e.hypot(v[1].1));
    }
}

#[test]
fn harnack_for_unit_data_gives_unit_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[harnack]
radii = [0.1, 0.2]
family = { fields = 2, data_count = 2, data = { kind = "constant", value = 1.0 }, grid = { dims = [11, 11, 13] } }
"#;
    let out = heis(dir.path(), "harnack", cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = rows(dir.path(), "harnack.csv");
    assert_eq!(table.len(), 8);
    assert!(table.iter().all(|r| r[5].parse::<f64>().unwrap() == 1.0));
}

#[test]
fn solve_reports_oracle_error_and_discrepancy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[solve]
grid = { dims = [12, 12, 12] }
data = { kind = "fundamental", pole = [0.0, 0.0, 2.0] }
"#;
    let out = heis(dir.path(), "solve", cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let l = log(dir.path(), "solve");
    assert!(l["summary"]["scheme_discrepancy"].as_f64().unwrap() < 5e-2);
    for run in l["summary"]["runs"].as_array().unwrap() {
        assert!(run["oracle_error"].as_f64().unwrap() < 1e-2);
    }
    assert_eq!(rows(dir.path(), "solve.csv").len(), 12 * 12 * 12);
}

#[test]
fn unknown_key_is_a_parse_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = heis(dir.path(), "alpha", "[alpha]\nsampels = 10\n", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sampels"));
}

#[test]
fn mismatched_command_is_a_parse_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = heis(dir.path(), "alpha", "command = \"holder\"\n", &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_epsilon0_table_is_a_parse_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = heis(dir.path(), "epsilon0", "", &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unattained_threshold_is_a_criterion_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[epsilon0]\nmodulus = { kind = \"hoelder\", c = 100.0, a = 1e-20 }\n";
    let out = heis(dir.path(), "epsilon0", cfg, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(log(dir.path(), "epsilon0")["pass"], false);
}

#[test]
fn config_seed_wins_over_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = heis(dir.path(), "gen-matrix", "seed = 4\n[gen-matrix]\ncount = 2\n", &["--seed", "9"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(log(dir.path(), "gen-matrix")["seed"], 4);
}

#[test]
fn generated_matrices_feed_back_as_file_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = heis(dir.path(), "gen-matrix", "[gen-matrix]\ncount = 2\nn = 2\n", &[]);
    assert_eq!(out.status.code(), Some(0));
    let file = dir.path().join("out").join("matrices.json");
    let cfg = format!("[verify-identities]\nconverse = false\npoints = 200\nmatrix = {{ file = {:?}, index = 1 }}\n", file);
    let out = heis(dir.path(), "verify-identities", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rows(dir.path(), "verify-identities.csv")[0][1], "2");
}

#[test]
fn outputs_are_deterministic_apart_from_the_header() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = "seed = 3\n[barrier-check]\ndeltas = [0.25]\nsamples = 4000\ngrowth = { samples = 4000, points = 2 }\n";
    for d in [&a, &b] {
        assert_eq!(heis(d.path(), "barrier-check", cfg, &[]).status.code(), Some(0));
    }
    for f in ["barrier-check.csv", "barrier-check-trace.csv"] {
        let read = |d: &tempfile::TempDir| {
            let t = std::fs::read_to_string(d.path().join("out").join(f)).unwrap();
            t.lines().skip(1).collect::<Vec<_>>().join("\n")
        };
        assert_eq!(read(&a), read(&b));
    }
}
