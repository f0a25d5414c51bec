use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use railchain_cli::commands::{self, RunOptions};
use serde_json::Value;

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run_into(dir: &Path, name: &str) -> commands::RunReport {
    commands::run(&RunOptions {
        scenario: scenarios().join(name),
        out: Some(dir.to_path_buf()),
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn run_writes_log_metrics_and_one_chain_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_into(dir.path(), "fork_drill.json");
    assert_eq!(r.outcome.exit_code, 0, "{:?}", r.outcome.violations);
    assert!(r.log.is_file() && r.metrics.is_file());
    let mut chains: Vec<String> = fs::read_dir(&r.chains)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    chains.sort();
    assert_eq!(chains, ["N1.chain", "N2.chain", "N3.chain"]);
}

#[test]
fn verify_accepts_written_chains_and_pins_the_tampered_block() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_into(dir.path(), "diamond_traffic.json");
    let topo = scenarios().join("topologies/diamond.json");
    let chain = r.chains.join("N1.chain");
    let ok = commands::verify(&chain, &topo).unwrap();
    assert_eq!(ok.first_bad, None, "{:?}", ok.problem);
    assert_eq!(
        ok.final_state_hash.as_deref(),
        Some(r.outcome.final_state_hash.as_str())
    );
    assert_eq!(ok.exit_code(), 0);

    let text = fs::read_to_string(&chain).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() > 4);
    let mut edited: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    edited[3] = edited[3].replacen("\"now\":", "\"now\":1", 1);
    let bad = dir.path().join("bad.chain");
    fs::write(&bad, edited.join("\n") + "\n").unwrap();
    let report = commands::verify(&bad, &topo).unwrap();
    assert_eq!(report.first_bad, Some(3));
    assert_eq!(report.exit_code(), 1);
}

#[test]
fn replay_reproduces_the_metrics_file() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_into(dir.path(), "race.json");
    let (m, same) = commands::replay(&r.log, Some(&r.metrics)).unwrap();
    assert_eq!(same, Some(true));
    assert_eq!(m, r.outcome.metrics);
}

#[test]
fn missing_scenario_is_a_config_error() {
    let err = commands::run(&RunOptions {
        scenario: scenarios().join("no_such.json"),
        ..Default::default()
    });
    assert!(err.is_err());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_railchain");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin)
        .arg("run")
        .arg(scenarios().join("tiny3_single.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["arrivals"], 1);

    let replay = Command::new(bin)
        .args(["replay"])
        .arg(dir.path().join("events.jsonl"))
        .arg("--check")
        .arg(dir.path().join("metrics.json"))
        .output()
        .unwrap();
    assert_eq!(replay.status.code(), Some(0));

    let verify = Command::new(bin)
        .arg("verify")
        .arg(dir.path().join("chains/N1.chain"))
        .arg(scenarios().join("topologies/tiny3.json"))
        .output()
        .unwrap();
    assert_eq!(
        verify.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&verify.stdout)
    );

    let missing = Command::new(bin)
        .args(["run", "/nonexistent/scenario.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(commands::EXIT_CONFIG));
}
