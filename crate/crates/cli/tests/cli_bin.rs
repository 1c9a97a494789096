//! Exit-code contract of the installed binary: 0 clean, 2 partial faults,
//! 1 error.

use std::process::Command;

fn splatsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splatsim"))
}

#[test]
fn demo_then_eval_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = splatsim()
        .args(["demo", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("pick_place.json").exists());

    let out = splatsim()
        .arg("eval")
        .arg(dir.path().join("manifest.json"))
        .args(["--workers", "2", "--out", "results"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("results/summary.json").exists());
    assert!(dir.path().join("results/report.csv").exists());

    // Replay the first episode through the binary as well.
    let out = splatsim()
        .arg("replay")
        .arg(dir.path().join("results/episodes/ep000/log.jsonl"))
        .arg("--scenario")
        .arg(dir.path().join("pick_place.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("matches_original=true"));

    let out = splatsim()
        .arg("report")
        .arg(dir.path().join("results/outcomes.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn partial_faults_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert!(splatsim().args(["demo", "--out"]).arg(dir.path()).status().unwrap().success());

    // A policy that dies immediately faults every episode but the batch
    // still completes.
    let manifest = serde_json::json!({
        "scenario": "push.json",
        "policy": {"type": "external", "command": "python3",
                   "args": ["-c", "import sys; sys.exit(1)"], "timeout_secs": 5},
        "episodes": 2,
        "seed": 0,
        "out": "results",
        "workers": 1,
    });
    let path = dir.path().join("faulty.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

    let out = splatsim().arg("eval").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_manifest_exits_one() {
    let out = splatsim().args(["eval", "/no/such/manifest.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
