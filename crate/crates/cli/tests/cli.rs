use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wsi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsi"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn histories() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../histories")
}

#[test]
fn check_matches_golden_file() {
    let o = wsi(&["check", histories().join("golden.txt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let golden = std::fs::read_to_string(histories().join("golden.expected")).unwrap();
    assert_eq!(stdout(&o), golden);
}

#[test]
fn check_empty_file_prints_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.txt");
    std::fs::write(&p, "").unwrap();
    let o = wsi(&["check", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
}

#[test]
fn check_reports_parse_errors_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.txt");
    std::fs::write(&p, "r1[x] c1\nr1[x] q2[y] c1\n").unwrap();
    let o = wsi(&["check", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn missing_file_and_bad_usage() {
    assert_eq!(
        wsi(&["check", "/nonexistent/histories.txt"]).status.code(),
        Some(1)
    );
    assert_eq!(wsi(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        wsi(&["run", "--policy", "serializable"]).status.code(),
        Some(2)
    );
    assert_eq!(
        wsi(&["run", "--policy", "si", "--clients", "0"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn single_client_runs_are_deterministic() {
    let args = [
        "run",
        "--policy",
        "wsi",
        "--dist",
        "zipfian-latest",
        "--clients",
        "1",
        "--txns",
        "3000",
        "--keys",
        "1000",
        "--seed",
        "4",
    ];
    let (a, b) = (wsi(&args), wsi(&args));
    assert_eq!(a.status.code(), Some(0));
    let strip = |o: &Output| -> Vec<String> {
        stdout(o)
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(stdout(&a).lines().count(), 2);
}

#[test]
fn uniform_run_over_large_key_space_rarely_aborts() {
    let o = wsi(&[
        "run",
        "--policy",
        "si",
        "--dist",
        "uniform",
        "--clients",
        "4",
        "--txns",
        "5000",
        "--keys",
        "20000000",
        "--no-header",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let line = stdout(&o);
    let fields: Vec<&str> = line.trim().split(',').collect();
    let abort_rate: f64 = fields[6].parse().unwrap();
    assert!(abort_rate < 0.005, "{line}");
}

#[test]
fn bench_with_zero_requests_prints_only_the_header() {
    let o = wsi(&["bench-oracle", "--policy", "si", "--requests", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        stdout(&o),
        "policy,clients,decisions_per_sec,p50_us,p99_us\n"
    );
}

#[test]
fn bench_prints_one_row() {
    let o = wsi(&[
        "bench-oracle",
        "--policy",
        "wsi",
        "--clients",
        "2",
        "--requests",
        "2000",
        "--no-header",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("wsi,2,"), "{out}");
    assert_eq!(out.lines().count(), 1);
}

#[test]
fn run_with_log_then_recover() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("oracle.wal");
    let o = wsi(&[
        "run",
        "--policy",
        "wsi",
        "--txns",
        "500",
        "--keys",
        "100",
        "--wal",
        log.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let r = wsi(&["recover", log.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    let out = stdout(&r);
    let field = |k: &str| -> u64 {
        out.lines()
            .find_map(|l| l.strip_prefix(&format!("{k}=")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(field("commits") + field("aborts"), 500);
    assert!(out.contains("torn_tail=false"));
}

#[test]
fn replay_prints_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.txt");
    std::fs::write(&p, "r1[x] r2[y] w1[y] w2[x] c1 c2\n").unwrap();
    let o = wsi(&["replay", p.to_str().unwrap(), "--policy", "wsi"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("txn2:aborted"), "{out}");
    assert!(out.contains("admissible=no"), "{out}");
}
