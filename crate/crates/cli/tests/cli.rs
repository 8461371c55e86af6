use std::fs;
use std::process::Command;

fn emanet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emanet"))
}

#[test]
fn run_writes_summary_transitions_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    fs::write(
        &cfg,
        "protocol = \"cml\"\nnodes = 14\nduration = 80.0\nwarmup = 10.0\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = emanet()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "2"])
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("cml,none,14,2,"));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 2"));
    assert!(out.join("transitions.log").exists());
}

#[test]
fn invalid_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "nodes = 1\n").unwrap();
    let status = emanet()
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("nodes"));
}

#[test]
fn sweep_rejects_unknown_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let status = emanet()
        .args(["sweep", "--protocols", "zrp", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("zrp"));
}
