//! End-to-end runs of the `stcs` binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn stcs(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stcs"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn generate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = stcs(&["generate", "--seed", "9", "--binary"], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["channel.bin", "observation.bin", "operator.txt", "config.txt"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert!(read(a.path(), "operator.txt").contains("kind=DFT_RP"));
}

#[test]
fn run_writes_results_and_replays_from_config() {
    let first = tempfile::tempdir().unwrap();
    let out = stcs(
        &["run", "--algorithm", "TURBO_CS,STCS_DS", "--trials", "3", "--snr-db", "20"],
        first.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trials = read(first.path(), "trials.csv");
    assert_eq!(trials.lines().count(), 1 + 2 * 3);
    assert_eq!(read(first.path(), "summary.csv").lines().count(), 3);
    assert_eq!(read(first.path(), "trials.jsonl").lines().count(), 6);

    let second = tempfile::tempdir().unwrap();
    let config = first.path().join("config.txt");
    let out = stcs(&["run", "--config", config.to_str().unwrap()], second.path());
    assert!(out.status.success());
    assert_eq!(trials, read(second.path(), "trials.csv"));
    assert_eq!(read(first.path(), "summary.csv"), read(second.path(), "summary.csv"));
}

#[test]
fn sweep_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = stcs(
        &["sweep", "--algorithm", "TURBO_CS", "--trials", "2", "--snr-db", "10,30", "--m", "77,128"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "sweep.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("snr_db,m,algorithm,mean_nmse_db,stderr_db,trials"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn bad_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = stcs(&["run", "--set", "trials"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = stcs(&["run", "--set", "no_such_key=3"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
