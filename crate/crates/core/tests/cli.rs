//! The `mw` binary end to end.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

const MINIMAL: &str = "n = 8\nQ = 16.755160819145562\nsigma = 1\nalpha = 1\nuniform density=1\n";

fn mw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mw")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write(dir: &Path, name: &str, contents: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, contents).unwrap();
    p.display().to_string()
}

fn kv<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in report:\n{report}"))
}

#[test]
fn demo_prints_both_radii() {
    let out = mw(&["demo", "stromgren", "--n", "16", "--workers", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let report = text(&out.stdout);
    let measured: f64 = kv(&report, "ionized_radius").parse().unwrap();
    let analytic: f64 = kv(&report, "stromgren_radius").parse().unwrap();
    assert_eq!(analytic, 4.0);
    assert!((measured / analytic - 1.0).abs() < 0.15, "{measured}");
}

#[test]
fn unknown_subcommand_exits_1() {
    let out = mw(&["launch"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_q_exits_2_naming_q() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", "n = 8\nsigma = 1\nalpha = 1\nuniform density=1\n");
    let out = mw(&["simulate", "--config", &cfg, "--synth", "n=2"]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("`Q`"), "{err}");
    assert_eq!(err.lines().count(), 1, "{err}");
}

#[test]
fn bad_value_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", &format!("{MINIMAL}tol = banana\n"));
    let out = mw(&["simulate", "--config", &cfg, "--synth", "n=2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("line 6"));
}

#[test]
fn non_convergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", &format!("{MINIMAL}max_epochs = 2\n"));
    let report = dir.path().join("r.txt");
    let out = mw(&[
        "simulate",
        "--config",
        &cfg,
        "--synth",
        "n=2",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", text(&out.stderr));
    assert!(fs::read_to_string(report).unwrap().contains("converged=false"));
}

#[test]
fn simulate_with_trace_file_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", MINIMAL);
    let trace = write(dir.path(), "pool.csv", "# two machines\n0,a,join\n0,b,join\n30,b,evict\n");
    let (report, grid, csv) = (dir.path().join("r.txt"), dir.path().join("x.bin"), dir.path().join("x.csv"));
    let out = mw(&[
        "simulate",
        "--config",
        &cfg,
        "--trace",
        &trace,
        "--report",
        report.to_str().unwrap(),
        "--output-grid",
        grid.to_str().unwrap(),
        "--output-csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let r = fs::read_to_string(&report).unwrap();
    assert_eq!(kv(&r, "created"), kv(&r, "completed"));
    assert_eq!(fs::metadata(&grid).unwrap().len(), 512 * 8);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 513);
}

#[test]
fn json_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", &format!("{MINIMAL}app = uniform\ntasks = 5\n"));
    let out = mw(&["simulate", "--config", &cfg, "--synth", "n=2", "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["sim"]["run"]["completed"], 5);
    assert_eq!(v["sim"]["makespan_s"], 3.0);
}

#[test]
fn set_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", &format!("{MINIMAL}app = uniform\ntasks = 5\n"));
    let out = mw(&["simulate", "--config", &cfg, "--synth", "n=5", "--set", "tasks=10"]);
    let report = text(&out.stdout);
    assert_eq!(kv(&report, "created"), "10");
    assert_eq!(kv(&report, "makespan_s"), "2");
}

#[test]
fn print_defaults_lists_table() {
    let out = mw(&["--print-defaults"]);
    assert_eq!(out.status.code(), Some(0));
    let t = text(&out.stdout);
    assert!(t.contains("eps_cut") && t.contains("death_multiplier"));
}

#[test]
fn master_and_workers_over_loopback() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", &format!("{MINIMAL}min_workers = 2\nheartbeat_s = 0.2\n"));
    let grid = dir.path().join("socket.bin");
    let mut master = Command::new(env!("CARGO_BIN_EXE_mw"))
        .args([
            "master",
            "--config",
            &cfg,
            "--listen",
            "127.0.0.1:0",
            "--output-grid",
            grid.to_str().unwrap(),
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(master.stderr.as_mut().unwrap()).read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on ").expect("address line").to_string();
    let workers: Vec<_> = (0..2)
        .map(|_| {
            Command::new(env!("CARGO_BIN_EXE_mw"))
                .args(["worker", "--connect", &addr])
                .stderr(Stdio::null())
                .spawn()
                .unwrap()
        })
        .collect();
    let out = master.wait_with_output().unwrap();
    for mut w in workers {
        assert!(w.wait().unwrap().success());
    }
    assert_eq!(out.status.code(), Some(0));
    let report = text(&out.stdout);
    assert_eq!(kv(&report, "workers_seen"), "2");
    assert_eq!(kv(&report, "converged"), "true");

    let sim_grid = dir.path().join("sim.bin");
    let sim = mw(&[
        "simulate",
        "--config",
        &cfg,
        "--synth",
        "n=2",
        "--output-grid",
        sim_grid.to_str().unwrap(),
    ]);
    assert_eq!(sim.status.code(), Some(0));
    assert_eq!(fs::read(grid).unwrap(), fs::read(sim_grid).unwrap());
    let sim_report = text(&sim.stdout);
    for key in ["epochs", "created", "completed", "reassigned", "duplicates"] {
        assert_eq!(kv(&report, key), kv(&sim_report, key), "{key}");
    }
}
