use std::fs;

use emanet_sim::config::Protocol;
use emanet_sim::harness::{run_sweep, write_outputs, SweepSpec};
use emanet_sim::metrics::{CUMULATIVE_HEADER, SUMMARY_HEADER};
use emanet_sim::security::SecurityMode;
use emanet_sim::ScenarioConfig;

fn spec() -> SweepSpec {
    let mut base = ScenarioConfig::shipped();
    base.duration = 90.0;
    base.warmup = 20.0;
    let mut spec = SweepSpec::new(base);
    spec.sizes = vec![6, 14];
    spec.seeds = vec![3, 4];
    spec.protocols = Protocol::ALL.to_vec();
    spec.modes = vec![SecurityMode::None, SecurityMode::Hybrid];
    spec
}

const FILES: [&str; 5] = [
    "summary.csv",
    "comparison.csv",
    "cumulative.csv",
    "transitions.log",
    "manifest.toml",
];

#[test]
fn sweeps_are_byte_identical_across_runs_and_thread_counts() {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, threads) in dirs.iter().zip([1, 3]) {
        let result = run_sweep(&spec(), threads).unwrap();
        write_outputs(dir.path(), &result).unwrap();
    }
    for f in FILES {
        let a = fs::read(dirs[0].path().join(f)).unwrap();
        let b = fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn csv_headers_are_stable() {
    assert_eq!(
        SUMMARY_HEADER,
        "protocol,security_mode,N,seed,avg_delay_s,avg_jitter_s,ctl_packets,ctl_bytes,data_sent,data_delivered,goodput_ratio,phase_shifts"
    );
    assert_eq!(
        CUMULATIVE_HEADER,
        "protocol,security_mode,N,cum_delay_s,cum_jitter_s,cum_ctl_packets,cum_ctl_bytes,cum_goodput_ratio"
    );
}

#[test]
fn outputs_cover_every_cell_and_figure() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let result = run_sweep(&s, 0).unwrap();
    write_outputs(dir.path(), &result).unwrap();
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some(SUMMARY_HEADER));
    assert_eq!(summary.lines().count(), 1 + s.cells().len());
    let comparison = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert!(comparison
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(3) == Some("mean")));
    assert_eq!(comparison.lines().count(), 1 + 4 * 2 * 2);
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert_eq!(manifest.matches("# ---- ").count(), s.cells().len());
    let plots: Vec<_> = fs::read_dir(dir.path().join("plots")).unwrap().collect();
    assert_eq!(plots.len(), 7);
}
