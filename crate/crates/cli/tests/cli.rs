use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn klocsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_klocsim")).args(args).output().expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn small_trace(dir: &TempDir) -> String {
    let t = path(dir, "trace.txt");
    let out = klocsim(&["generate", "--pattern", "rand_write", "--seed", "7", "--ops", "300", "--files", "2", "--out", &t]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    t
}

fn lines(p: impl AsRef<Path>) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(String::from).collect()
}

#[test]
fn generate_is_seeded() {
    let dir = TempDir::new().unwrap();
    let a = small_trace(&dir);
    let b = path(&dir, "again.txt");
    assert!(klocsim(&["generate", "--pattern", "rand_write", "--seed", "7", "--ops", "300", "--files", "2", "--out", &b]).status.success());
    assert_eq!(fs::read_to_string(&a).unwrap(), fs::read_to_string(&b).unwrap());
    assert!(klocsim(&["generate", "--pattern", "rand_write", "--seed", "8", "--ops", "300", "--files", "2", "--out", &b]).status.success());
    assert!(fs::read_to_string(&a).unwrap() != fs::read_to_string(&b).unwrap());
}

#[test]
fn run_writes_metric_rows() {
    let dir = TempDir::new().unwrap();
    let t = small_trace(&dir);
    let out = path(&dir, "stats.csv");
    let r = klocsim(&["run", "--trace", &t, "--policy", "KLOC-MIGRATE-FS", "--out", &out]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = lines(&out);
    assert_eq!(rows[0], "metric,value");
    assert_eq!(rows[1], "policy,kloc-migrate-fs");
    assert!(rows.iter().skip(1).all(|r| r.split(',').count() == 2));
    assert!(rows.iter().any(|r| r.starts_with("throughput_ops_per_sec,")));
}

#[test]
fn compare_writes_one_row_per_policy() {
    let dir = TempDir::new().unwrap();
    let t = small_trace(&dir);
    let out = path(&dir, "table.csv");
    let r = klocsim(&["compare", "--trace", &t, "--policies", "all-slow,all-fast,naive", "--out", &out]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = lines(&out);
    assert_eq!(rows[0], "policy,throughput_ops_per_sec,fast_miss_count,migrations,peak_slow_kernel_pages");
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["all-slow", "all-fast", "naive"]);
    let thr = |i: usize| rows[i].split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!(thr(2) > thr(1));
}

#[test]
fn sweep_writes_a_curve() {
    let dir = TempDir::new().unwrap();
    let t = small_trace(&dir);
    let out = path(&dir, "curve.csv");
    let r = klocsim(&[
        "sweep", "--trace", &t, "--axis", "SLOW_BANDWIDTH_RATIO", "--values", "1/16,0.5", "--policies", "naive,nimble", "--out", &out,
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = lines(&out);
    assert_eq!(rows[0], "axis_value,policy,throughput_ops_per_sec");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("0.0625,naive,"));
    assert!(rows[4].starts_with("0.5,nimble,"));
}

#[test]
fn config_file_is_applied() {
    let dir = TempDir::new().unwrap();
    let t = small_trace(&dir);
    let cfg = path(&dir, "sim.cfg");
    fs::write(&cfg, "policy = all-slow\nseed = 9\n").unwrap();
    let r = klocsim(&["run", "--trace", &t, "--config", &cfg]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stdout).contains("policy,all-slow\n"));
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let t = small_trace(&dir);
    let cfg = path(&dir, "bad.cfg");
    fs::write(&cfg, "tier.slow.bandwidth_ratio = 0\n").unwrap();
    assert_eq!(klocsim(&["run", "--trace", &t, "--config", &cfg]).status.code(), Some(2));
    assert_eq!(klocsim(&["run", "--trace", &t, "--policy", "fastest"]).status.code(), Some(2));
    assert_eq!(klocsim(&["compare", "--trace", &t, "--policies", "naive,bogus"]).status.code(), Some(2));
    assert_eq!(klocsim(&["sweep", "--trace", &t, "--axis", "latency", "--values", "1"]).status.code(), Some(2));
    assert_eq!(klocsim(&["sweep", "--trace", &t, "--axis", "fast_capacity_ratio", "--values", "0"]).status.code(), Some(2));
    assert_eq!(klocsim(&["run", "--trace", &t, "--config", &path(&dir, "absent.cfg")]).status.code(), Some(2));
}

#[test]
fn trace_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let bad = path(&dir, "bad.txt");
    fs::write(&bad, "0 0 WRITE 1 0\n").unwrap();
    assert_eq!(klocsim(&["run", "--trace", &bad]).status.code(), Some(3));
    fs::write(&bad, "10 0 CREATE 1 0 0\n5 0 CLOSE 1 0 0\n").unwrap();
    assert_eq!(klocsim(&["run", "--trace", &bad]).status.code(), Some(3));
    fs::write(&bad, "0 0 READ 4 0 4096\n").unwrap();
    assert_eq!(klocsim(&["compare", "--trace", &bad, "--policies", "naive"]).status.code(), Some(3));
    assert_eq!(klocsim(&["run", "--trace", &path(&dir, "absent.txt")]).status.code(), Some(3));
}
