use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use tracewatch::event::write_log;
use tracewatch::sim::{simulate_crawl, PAGE_NEWS, PAGE_SEARCH};
use tracewatch::Site;

fn tracewatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tracewatch"))
        .args(args)
        .output()
        .unwrap()
}

fn harness(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench-harness"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn simulate(dir: &TempDir, name: &str, scenario: &str, seed: &str) -> String {
    let out = path(dir, name);
    let o = tracewatch(&[
        "simulate",
        "--scenario",
        scenario,
        "--seed",
        seed,
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn crawl_log(dir: &TempDir, name: &str, pages: &[&str], per_page: usize) -> String {
    let out = simulate_crawl(&Site::cms(), pages, per_page, 1_000, 9).unwrap();
    let p = path(dir, name);
    write_log(fs::File::create(&p).unwrap(), &out.events).unwrap();
    p
}

#[test]
fn simulate_is_deterministic_and_writes_truth() {
    let dir = TempDir::new().unwrap();
    let a = simulate(&dir, "a.log", "normal", "1");
    let b = simulate(&dir, "b.log", "normal", "1");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(format!("{a}.truth")).unwrap(), "");

    let p = simulate(&dir, "p.log", "probe", "7");
    let truth = fs::read_to_string(format!("{p}.truth")).unwrap();
    let fields: Vec<&str> = truth.trim_end().split('\t').collect();
    assert_eq!(fields.len(), 3);
    assert_eq!(fields[2], "probe");
    assert!(fields[0].parse::<u64>().unwrap() < fields[1].parse::<u64>().unwrap());
}

#[test]
fn simulate_usage_errors() {
    let dir = TempDir::new().unwrap();
    let o = tracewatch(&["simulate", "--scenario", "normal", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = tracewatch(&[
        "simulate",
        "--scenario",
        "flood",
        "--out",
        &path(&dir, "x.log"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!Path::new(&path(&dir, "x.log")).exists());
}

#[test]
fn simulate_request_budget() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "s.log");
    let o = tracewatch(&[
        "simulate",
        "--scenario",
        "normal",
        "--requests",
        "200",
        "--out",
        &out,
    ]);
    assert!(o.status.success());
    let markers = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .filter(|l| l.contains(".beginRequest."))
        .count();
    assert_eq!(markers, 200);
}

#[test]
fn detect_exit_codes_follow_verdicts() {
    let dir = TempDir::new().unwrap();
    let normal = simulate(&dir, "n.log", "normal", "2");
    let o = tracewatch(&["detect", "--in", &normal]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!stdout(&o).contains("ATTACK"));

    let probe = simulate(&dir, "p.log", "probe", "2");
    let truth = format!("{probe}.truth");
    let o = tracewatch(&["detect", "--in", &probe, "--truth", &truth]);
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.ends_with("\tATTACK")));
    assert!(text.contains("# scenario\tprobe"));
    assert!(text.contains("# false_positives\t0"));

    let o = tracewatch(&["detect", "--in", &probe, "--sensitivity", "1e9"]);
    assert_eq!(o.status.code(), Some(0));

    let o = tracewatch(&[
        "detect",
        "--in",
        &probe,
        "--global-model",
        "--grouping",
        "gap:0",
    ]);
    assert!(matches!(o.status.code(), Some(0 | 2)));
    assert!(stdout(&o)
        .lines()
        .all(|l| l.split('\t').nth(1) == Some("*")));
}

#[test]
fn detect_report_lines_have_six_fields() {
    let dir = TempDir::new().unwrap();
    let log = simulate(&dir, "n.log", "normal", "3");
    let o = tracewatch(&[
        "detect",
        "--in",
        &log,
        "--period-ms",
        "5000",
        "--history",
        "10",
        "--quantile",
        "0.9",
    ]);
    let text = stdout(&o);
    assert!(!text.is_empty());
    for line in text.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 6, "{line}");
        assert!(f[5] == "OK" || f[5] == "ATTACK");
    }
    // first ten periods are warm-up
    assert!(text
        .lines()
        .filter(|l| l.starts_with("0\t"))
        .all(|l| l.contains("\t-\t-\tOK")));
}

#[test]
fn detect_rejects_bad_input() {
    let dir = TempDir::new().unwrap();
    let bad = path(&dir, "bad.log");
    fs::write(&bad, "1,0,a.B.c.0.0.0,5\n2,0,a.B.c.0.0.0\n").unwrap();
    let o = tracewatch(&["detect", "--in", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = tracewatch(&["detect", "--in", &path(&dir, "missing.log")]);
    assert_eq!(o.status.code(), Some(1));

    let o = tracewatch(&["detect", "--in", &bad, "--quantile", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn detect_warns_on_disorder() {
    let dir = TempDir::new().unwrap();
    let log = path(&dir, "o.log");
    fs::write(&log, "5,0,a.B.c.0.0.0,5\n3,0,a.B.c.0.0.0,5\n").unwrap();
    let o = tracewatch(&["detect", "--in", &log]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn fingerprint_listing_and_plot() {
    let dir = TempDir::new().unwrap();
    let same = crawl_log(&dir, "same.log", &[PAGE_NEWS], 100);
    let o = tracewatch(&["fingerprint", "--in", &same]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0].split('\t').nth(1), Some("100"));
    let plot = fs::read_to_string(format!("{same}.plot.tsv")).unwrap();
    assert!(plot.starts_with("class_key\tposition\tsid\tmean_duration_ms\n"));
    assert!(plot.lines().count() > 2);

    let two = crawl_log(&dir, "two.log", &[PAGE_NEWS, PAGE_SEARCH], 20);
    let plot_path = path(&dir, "two.tsv");
    let o = tracewatch(&["fingerprint", "--in", &two, "--plot", &plot_path]);
    assert_eq!(stdout(&o).lines().count(), 2);
    assert!(Path::new(&plot_path).exists());
}

#[test]
fn fingerprint_of_empty_log_is_empty() {
    let dir = TempDir::new().unwrap();
    let empty = path(&dir, "e.log");
    fs::write(&empty, "").unwrap();
    let o = tracewatch(&["fingerprint", "--in", &empty]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
}

#[test]
fn bench_conserves_events_across_runs() {
    let o = tracewatch(&["bench", "--requests", "500", "--runs", "2", "--seed", "4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .take(2)
        .map(|l| l.split('\t').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r[1], "500");
        assert_eq!(r[2], r[3]);
    }
    assert_eq!(rows[0][2], rows[1][2]);
}

#[test]
fn harness_runs_named_experiment() {
    let o = harness(&["run", "fingerprint-stability", "--seeds", "1..2"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().last().unwrap().contains("\tpass\t2 seeds"));

    let o = harness(&["run", "fingerprint-stability", "--seeds", "3,5"]);
    assert!(stdout(&o).contains("fingerprint-stability\t5\t"));

    assert_eq!(harness(&["run", "nonsense"]).status.code(), Some(1));
    assert_eq!(
        harness(&["run", "overhead", "--seeds", "5..1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(stdout(&harness(&["list"])).lines().count(), 4);
}
