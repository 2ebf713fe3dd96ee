//! End-to-end tests of the binary: output schemas, exit codes,
//! reproducibility, and the group-table cache.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfcount"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8 output")
}

#[test]
fn dim_emits_json_with_schema_and_digits() {
    let out = run(&["dim", "--alphabet", "1,2", "--nodes", "12"]);
    assert!(out.status.success());
    let s = stdout(&out);
    assert!(s.starts_with("{\"schema_version\":1,"));
    assert!(s.contains("\"command\":\"dim\""));
    assert!(s.contains("\"alphabet\":\"1,2\""));
    assert!(s.contains("\"delta\":5.31280506277205"));
    // 17 significant digits in scientific notation
    assert!(s.contains("e-1"));
    assert!(s.ends_with("}\n"));
}

#[test]
fn dim_accepts_range_alphabet_syntax() {
    let out = run(&["dim", "--alphabet", "1..3", "--nodes", "8"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("\"alphabet\":\"1,2,3\""));
}

#[test]
fn count_csv_has_header_meta_and_exact_partition() {
    let out = run(&["count", "--alphabet", "1,2", "--R", "60", "--mod", "3"]);
    assert!(out.status.success());
    let s = stdout(&out);
    assert!(s.contains("# command=count"));
    assert!(s.contains("# seed=0"));
    let lines: Vec<&str> = s.lines().collect();
    let header = lines.iter().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(*header, "residue_index,count");
    // totals row closes the table; residue rows sum to it
    let total_line = lines.iter().find(|l| l.starts_with("total,")).unwrap();
    let total: f64 = total_line.strip_prefix("total,").unwrap().parse().unwrap();
    let sum: f64 = lines
        .iter()
        .filter(|l| !l.starts_with('#') && !l.starts_with("total") && !l.starts_with("residue"))
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert_eq!(sum, total);
    // only LF line endings
    assert!(!s.contains('\r'));
}

#[test]
fn unknown_flags_exit_with_usage_error() {
    let out = run(&["count", "--alphabet", "1,2", "--R", "10", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["dim", "--alphabet", "2,1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn singleton_alphabet_is_rejected_where_meaningless() {
    let out = run(&["dim", "--alphabet", "2"]);
    assert_eq!(out.status.code(), Some(2));
    // but the denominator enumeration accepts it
    let out = run(&["zaremba", "--alphabet", "2", "--N", "12"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("\"count\":4"));
}

#[test]
fn zaremba_reports_windows_and_witness() {
    let out = run(&[
        "zaremba",
        "--alphabet",
        "1,2",
        "--N",
        "1000",
        "--windows",
        "1:1000,500:1000",
        "--verify",
        "5",
    ]);
    assert!(out.status.success());
    let s = stdout(&out);
    assert!(s.contains("\"windows\":[{\"lo\":1,\"hi\":1000"));
    // the search returns the lexicographically first witness, [1,1,1,1]
    assert!(s.contains("\"verify\":{\"d\":5,\"member\":true,\"witness\":[1,1,1,1]}"));

    // over the singleton alphabet the witness is the hand expansion 2/5 = [2,2]
    let out = run(&["zaremba", "--alphabet", "2", "--N", "12", "--verify", "5"]);
    assert!(stdout(&out).contains("\"witness\":[2,2]"));
}

#[test]
fn zaremba_empty_window_is_validation_error() {
    let out = run(&["zaremba", "--alphabet", "1,2", "--N", "100", "--windows", "9:3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn spectrum_rows_cover_the_grid() {
    let out = run(&[
        "spectrum",
        "--alphabet",
        "1,2",
        "--q-list",
        "1,5",
        "--b-list",
        "0,1",
        "--nodes",
        "8",
    ]);
    assert!(out.status.success());
    let s = stdout(&out);
    let rows: Vec<&str> = s.lines().filter(|l| !l.starts_with('#') && !l.starts_with("q,")).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let radius: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
        assert!(radius < 1.0);
    }
}

#[test]
fn mix_without_any_measurement_is_an_error() {
    let out = run(&["mix", "--alphabet", "1,2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["mix", "--alphabet", "1,2", "--gap-primes", "3,5"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("spectral_gap,3,1,"));
}

#[test]
fn probe_nli_is_seed_deterministic() {
    let a = run(&["probe-nli", "--alphabet", "1,2", "--samples", "50", "--seed", "7"]);
    let b = run(&["probe-nli", "--alphabet", "1,2", "--samples", "50", "--seed", "7"]);
    let c = run(&["probe-nli", "--alphabet", "1,2", "--samples", "50", "--seed", "8"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(stdout(&a), stdout(&c));
}

#[test]
fn count_totals_independent_of_worker_count() {
    let one = run(&["count", "--alphabet", "1,2", "--R", "200", "--workers", "1"]);
    let two = run(&["count", "--alphabet", "1,2", "--R", "200", "--workers", "2"]);
    assert_eq!(stdout(&one), stdout(&two));
}

#[test]
fn group_cache_round_trips_through_env_dir() {
    let dir = std::env::temp_dir().join(format!("cfcount_cli_cache_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let run_cached = |dir: &PathBuf| {
        let out = bin()
            .args(["count", "--alphabet", "1,2", "--R", "40", "--mod", "5"])
            .env("CFCOUNT_CACHE_DIR", dir)
            .output()
            .unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    let first = run_cached(&dir);
    assert!(dir.join("sl2_q5.tbl").exists(), "cache file written");
    let second = run_cached(&dir);
    assert_eq!(first, second);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn out_flag_writes_the_file() {
    let path = std::env::temp_dir().join(format!("cfcount_out_{}.json", std::process::id()));
    let out = bin()
        .args(["dim", "--alphabet", "1,2", "--nodes", "8", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let content = std::fs::read_to_string(&path).unwrap();
    assert!(content.contains("\"delta\":"));
    std::fs::remove_file(&path).ok();
}

#[test]
fn selftest_passes() {
    let out = run(&["selftest"]);
    assert!(out.status.success(), "selftest failed:\n{}", stdout(&out));
    let s = stdout(&out);
    assert!(s.lines().filter(|l| l.starts_with("ok ")).count() >= 10);
    assert!(!s.contains("FAIL"));
}
