//! The `pper` binary: exit codes and diagnostics.

use std::fs;
use std::process::Command;

fn pper() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pper"))
}

#[test]
fn unknown_strategy_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[run]\nstrategies = [\"per\", \"nope\"]\n").unwrap();
    let out = pper().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("run.strategies") && err.contains("nope"),
        "{err}"
    );
}

#[test]
fn unknown_key_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[agent]\ngamma = 0.9\nlearning_rate = 0.1\n").unwrap();
    let out = pper().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("learning_rate") && err.contains("line 3"),
        "{err}"
    );
}

#[test]
fn usage_errors_and_missing_files() {
    assert_eq!(pper().output().unwrap().status.code(), Some(1));
    assert_eq!(
        pper()
            .args(["run", "/nonexistent/x.toml"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        pper().arg("--help").output().unwrap().status.code(),
        Some(0)
    );
    let dir = tempfile::tempdir().unwrap();
    let out = pper()
        .arg("replay-metrics")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ok.toml");
    fs::write(
        &cfg,
        "[run]\nstrategies = [\"tdclippred\"]\nenvs = [\"cliffwalk\"]\nseeds = 1\neval_interval = 100\n\
         [agent]\nhidden = [8]\npredictor_width = 32\nwarmup = 32\nt_max = 300\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = pper()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--jobs", "1"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("[cliffwalk]"));
    let run = out_dir.join("tdclippred/cliffwalk/seed0");
    let out = pper().arg("replay-metrics").arg(&run).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&out.stdout),
        fs::read_to_string(run.join("summary.txt")).unwrap()
    );
}

#[test]
fn numerical_abort_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("boom.toml");
    fs::write(
        &cfg,
        "[run]\nstrategies = [\"per\"]\nenvs = [\"chain\"]\nseeds = 1\n[agent]\nhidden = [8]\nwarmup = 16\nt_max = 400\neta_q = 1e308\n",
    )
    .unwrap();
    let out = pper()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("o/per/chain/seed0/failure.txt").is_file());
}
