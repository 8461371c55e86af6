//! Acceptance criteria as reusable evaluators. Each returns a [`Verdict`]
//! with a one-line explanation; the `acceptance` test target and the
//! `emanet accept` verb both print them.

use crate::aodv::AodvState;
use crate::config::{ChannelConfig, MobilityConfig, Protocol, ScenarioConfig};
use crate::harness::{self, bfs_distances, CellResult, HarnessError, SweepResult, SweepSpec};
use crate::metrics::{cumulate, RunSummary};
use crate::olsr::OlsrState;
use crate::packet::StablePhase;
use crate::security::{
    aes_times, hmac_time, space_overhead, AdversaryBehavior, AdversaryRole, DeviceProfile,
    SecurityMode,
};
use crate::sim::{Router, RunOutput, World};
use crate::NodeId;

/// Sizes swept for the comparison criteria.
pub const SWEEP_SIZES: [u32; 10] = [5, 10, 15, 20, 25, 30, 35, 40, 45, 50];
pub const SWEEP_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(id: u8, name: &'static str, checks: &[(bool, String)]) -> Self {
        let passed = checks.iter().all(|(ok, _)| *ok);
        let detail = checks
            .iter()
            .map(|(ok, d)| format!("{}{d}", if *ok { "" } else { "!" }))
            .collect::<Vec<_>>()
            .join("; ");
        Self {
            id,
            name,
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub verdicts: Vec<Verdict>,
}

impl Report {
    pub fn lines(&self) -> Vec<String> {
        self.verdicts.iter().map(Verdict::line).collect()
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

fn fmt_ms(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{:.2}ms", x * 1e3))
}

/// Default-mobility sweep of all four protocols without security.
pub fn comparison_sweep(parallel: usize) -> Result<SweepResult, HarnessError> {
    let mut spec = SweepSpec::new(ScenarioConfig::shipped());
    spec.sizes = SWEEP_SIZES.to_vec();
    spec.seeds = SWEEP_SEEDS.to_vec();
    spec.protocols = Protocol::ALL.to_vec();
    spec.modes = vec![SecurityMode::None];
    harness::run_sweep(&spec, parallel)
}

/// Default-mobility sweep of CML under every security mode.
pub fn security_sweep(parallel: usize) -> Result<SweepResult, HarnessError> {
    let mut spec = SweepSpec::new(ScenarioConfig::shipped());
    spec.sizes = SWEEP_SIZES.to_vec();
    spec.seeds = SWEEP_SEEDS.to_vec();
    spec.protocols = vec![Protocol::Cml];
    spec.modes = SecurityMode::ALL.to_vec();
    harness::run_sweep(&spec, parallel)
}

fn none_mean(sweep: &SweepResult, p: Protocol, n: u32) -> Option<RunSummary> {
    sweep.mean(p, SecurityMode::None, n)
}

fn seed_delays(sweep: &SweepResult, p: Protocol, n: u32) -> Vec<Option<f64>> {
    SWEEP_SEEDS
        .iter()
        .map(|&s| {
            sweep
                .cell(p, SecurityMode::None, n, s)
                .and_then(|c| c.output.summary.avg_delay)
        })
        .collect()
}

fn lt(a: Option<f64>, b: Option<f64>) -> bool {
    matches!((a, b), (Some(a), Some(b)) if a < b)
}

fn le(a: Option<f64>, b: Option<f64>) -> bool {
    matches!((a, b), (Some(a), Some(b)) if a <= b)
}

/// Criterion 1: OLSR faster than AODV at small sizes, AODV faster from 20 nodes on,
/// in at least four of five seeds per size.
pub fn crossover(sweep: &SweepResult) -> Verdict {
    let mut checks = Vec::new();
    for (n, olsr_first) in [
        (5, true),
        (10, true),
        (20, false),
        (30, false),
        (40, false),
        (50, false),
    ] {
        let olsr = seed_delays(sweep, Protocol::Olsr, n);
        let aodv = seed_delays(sweep, Protocol::Aodv, n);
        let wins = olsr
            .iter()
            .zip(&aodv)
            .filter(|(o, a)| {
                if olsr_first {
                    lt(**o, **a)
                } else {
                    lt(**a, **o)
                }
            })
            .count();
        let label = if olsr_first { "olsr<aodv" } else { "aodv<olsr" };
        checks.push((wins >= 4, format!("N={n} {label} in {wins}/5")));
    }
    Verdict::new(1, "delay crossover", &checks)
}

/// Criterion 2: CML mean delay within 10% of the better of OLSR and AODV, and no
/// worse than DSR, at every size.
pub fn cml_envelope(sweep: &SweepResult) -> Verdict {
    let checks: Vec<(bool, String)> = SWEEP_SIZES
        .iter()
        .map(|&n| {
            let d = |p| none_mean(sweep, p, n).and_then(|m| m.avg_delay);
            let (cml, olsr, aodv, dsr) = (
                d(Protocol::Cml),
                d(Protocol::Olsr),
                d(Protocol::Aodv),
                d(Protocol::Dsr),
            );
            let best = match (olsr, aodv) {
                (Some(o), Some(a)) => Some(o.min(a)),
                (o, a) => o.or(a),
            };
            let ok = le(cml, best.map(|b| 1.10 * b)) && le(cml, dsr);
            (
                ok,
                format!("N={n} cml={} best={}", fmt_ms(cml), fmt_ms(best)),
            )
        })
        .collect();
    Verdict::new(2, "CML delay envelope", &checks)
}

/// Criterion 3: DSR has the greatest mean delay at seven or more sizes and the
/// greatest routing load at N = 50.
pub fn dsr_worst(sweep: &SweepResult) -> Verdict {
    let worst: Vec<u32> = SWEEP_SIZES
        .iter()
        .copied()
        .filter(|&n| {
            let d = |p| none_mean(sweep, p, n).and_then(|m| m.avg_delay);
            let dsr = d(Protocol::Dsr);
            [Protocol::Olsr, Protocol::Aodv, Protocol::Cml]
                .iter()
                .all(|&p| lt(d(p), dsr))
        })
        .collect();
    let load = |p| none_mean(sweep, p, 50).map_or(0, |m| m.ctl_bytes);
    let dsr_load = load(Protocol::Dsr);
    let others = [Protocol::Olsr, Protocol::Aodv, Protocol::Cml].map(load);
    let heaviest = others.iter().all(|&o| dsr_load > o);
    Verdict::new(
        3,
        "DSR worst",
        &[
            (
                worst.len() >= 7,
                format!("dsr slowest at {}/10 sizes {worst:?}", worst.len()),
            ),
            (
                heaviest,
                format!("N=50 load dsr={dsr_load}B olsr/aodv/cml={others:?}"),
            ),
        ],
    )
}

/// Criterion 4: OLSR jitter no worse than AODV up to 10 nodes, AODV no worse from 20,
/// CML within 10% of the better of the two everywhere.
pub fn jitter_ordering(sweep: &SweepResult) -> Verdict {
    let mut checks = Vec::new();
    for &n in &SWEEP_SIZES {
        let j = |p| none_mean(sweep, p, n).and_then(|m| m.avg_jitter);
        let (olsr, aodv, cml) = (j(Protocol::Olsr), j(Protocol::Aodv), j(Protocol::Cml));
        if n <= 10 {
            checks.push((
                le(olsr, aodv),
                format!("N={n} olsr={} aodv={}", fmt_ms(olsr), fmt_ms(aodv)),
            ));
        } else if n >= 20 {
            checks.push((
                le(aodv, olsr),
                format!("N={n} aodv={} olsr={}", fmt_ms(aodv), fmt_ms(olsr)),
            ));
        }
        let best = match (olsr, aodv) {
            (Some(o), Some(a)) => Some(o.min(a)),
            (o, a) => o.or(a),
        };
        checks.push((
            le(cml, best.map(|b| 1.10 * b)),
            format!("N={n} cml={}", fmt_ms(cml)),
        ));
    }
    Verdict::new(4, "jitter ordering", &checks)
}

/// The protocol CML should settle on at size `n`, or `None` inside the
/// hysteresis band `[nst - x, nst + x]`.
pub fn stable_protocol(cfg: &ScenarioConfig, n: u32) -> Option<Protocol> {
    let (nst, x) = (cfg.cml.nst, cfg.cml.x);
    if n < nst.saturating_sub(x) {
        Some(Protocol::Olsr)
    } else if n > nst + x {
        Some(Protocol::Aodv)
    } else {
        None
    }
}

/// Criterion 5: OLSR carries the least routing load at N = 50; CML load at most 15%
/// above its stable-phase protocol outside the hysteresis band; CML and
/// OLSR loads identical at N = 5 for every seed.
pub fn routing_load(sweep: &SweepResult) -> Verdict {
    let load = |p, n| none_mean(sweep, p, n).map_or(0, |m| m.ctl_bytes);
    let olsr50 = load(Protocol::Olsr, 50);
    let others = [Protocol::Aodv, Protocol::Dsr, Protocol::Cml].map(|p| load(p, 50));
    let mut checks = vec![(
        others.iter().all(|&o| olsr50 < o),
        format!("N=50 olsr={olsr50}B aodv/dsr/cml={others:?}"),
    )];
    let base = ScenarioConfig::shipped();
    for &n in &SWEEP_SIZES {
        let Some(stable) = stable_protocol(&base, n) else {
            continue;
        };
        let (cml, reference) = (load(Protocol::Cml, n), load(stable, n));
        let ratio = cml as f64 / reference.max(1) as f64;
        checks.push((ratio <= 1.15, format!("N={n} cml/{stable}={ratio:.2}")));
    }
    let equal = SWEEP_SEEDS.iter().all(|&s| {
        let b = |p| {
            sweep
                .cell(p, SecurityMode::None, 5, s)
                .map(|c| c.output.summary.ctl_bytes)
        };
        b(Protocol::Cml).is_some() && b(Protocol::Cml) == b(Protocol::Olsr)
    });
    checks.push((equal, "N=5 cml bytes == olsr bytes per seed".to_string()));
    Verdict::new(5, "routing load", &checks)
}

/// Criterion 6: Closed-form SCML costs at 450 MIPS.
pub fn analytic() -> Verdict {
    let dev = DeviceProfile::default();
    let (enc, dec) = aes_times(&dev);
    let hmac = hmac_time(1, &dev);
    // 778 / 450 MIPS is 1.729 us; the published 1.68 us is about 3% lower
    // and cannot be reproduced from the stated operation counts.
    let hmac_gap = (hmac - 1.68e-6) / 1.68e-6;
    Verdict::new(
        6,
        "SCML analytic values",
        &[
            (
                enc == 6168.0 / 450e6 && (enc - 13.7e-6).abs() <= 0.1e-6,
                format!("t_enc={:.6}us", enc * 1e6),
            ),
            (
                dec == 10992.0 / 450e6 && (dec - 24.4e-6).abs() <= 0.1e-6,
                format!("t_dec={:.6}us", dec * 1e6),
            ),
            (
                space_overhead(SecurityMode::Hybrid) == 34,
                format!("hybrid space={}B", space_overhead(SecurityMode::Hybrid)),
            ),
            (
                hmac == 778.0 / 450e6,
                format!(
                    "hmac(1)={:.4}us ({:+.1}% vs 1.68us expected)",
                    hmac * 1e6,
                    hmac_gap * 100.0
                ),
            ),
        ],
    )
}

/// Static CML network on the ideal channel used for the additivity check.
pub fn additivity_scenario(seed: u64) -> ScenarioConfig {
    let mut cfg = harness::static_grid(&ScenarioConfig::shipped(), 9);
    cfg.channel = ChannelConfig::ideal();
    cfg.seed = seed;
    cfg
}

/// Largest deviation between the hybrid-minus-none delay of each packet
/// delivered in both runs and the security delay recorded along its path.
pub fn additivity_error(none: &RunOutput, hybrid: &RunOutput) -> (usize, f64) {
    let mut matched = 0;
    let mut worst: f64 = 0.0;
    for h in hybrid.metrics.deliveries() {
        let Some(n) = none.metrics.delivery(h.flow, h.seq) else {
            continue;
        };
        if n.hops != h.hops {
            worst = f64::INFINITY;
            continue;
        }
        matched += 1;
        worst = worst.max(((h.delay() - n.delay()) - h.security_delay).abs());
    }
    (matched, worst)
}

/// Criterion 7: Security overhead composes additively and orders the modes.
pub fn security_overhead(sweep: &SweepResult, parallel: usize) -> Result<Verdict, HarnessError> {
    let mut cells = Vec::new();
    for seed in SWEEP_SEEDS {
        for mode in [SecurityMode::None, SecurityMode::Hybrid] {
            cells.push(ScenarioConfig {
                security: mode,
                ..additivity_scenario(seed)
            });
        }
    }
    let runs = harness::run_cells(cells, parallel)?;
    let mut checks = Vec::new();
    let (mut matched, mut worst) = (0, 0.0_f64);
    for pair in runs.chunks(2) {
        let (m, w) = additivity_error(&pair[0].output, &pair[1].output);
        matched += m;
        worst = worst.max(w);
    }
    checks.push((
        matched > 0 && worst <= 1e-12,
        format!("additivity over {matched} packets max err {worst:.1e}s"),
    ));

    let series: Vec<(SecurityMode, Vec<_>)> = SecurityMode::ALL
        .iter()
        .map(|&mode| {
            let rows: Vec<RunSummary> = SWEEP_SIZES
                .iter()
                .filter_map(|&n| sweep.mean(Protocol::Cml, mode, n))
                .collect();
            (mode, cumulate(&rows))
        })
        .collect();
    let at = |mode: SecurityMode, i: usize| {
        let (_, points) = series
            .iter()
            .find(|(m, _)| *m == mode)
            .expect("every mode swept");
        &points[i]
    };
    let (mut order_bad, mut gap_bad, mut goodput_bad) = (Vec::new(), Vec::new(), Vec::new());
    for (i, n) in SWEEP_SIZES.iter().enumerate() {
        let d = |m| at(m, i).delay;
        let (none, ah, esp, hyb) = (
            d(SecurityMode::None),
            d(SecurityMode::AhOnly),
            d(SecurityMode::EspOnly),
            d(SecurityMode::Hybrid),
        );
        if !(none < ah && ah < esp && esp < hyb) {
            order_bad.push(*n);
        }
        if hyb - esp >= ah - none {
            gap_bad.push(*n);
        }
        let g = |m| at(m, i).goodput;
        let none_g = g(SecurityMode::None);
        if [
            SecurityMode::AhOnly,
            SecurityMode::EspOnly,
            SecurityMode::Hybrid,
        ]
        .iter()
        .any(|&m| g(m) >= none_g)
        {
            goodput_bad.push(*n);
        }
    }
    let last = SWEEP_SIZES.len() - 1;
    let cum = |m| at(m, last).delay * 1e3;
    checks.push((
        order_bad.is_empty(),
        format!(
            "cumulative delay none<ah<esp<hybrid violated at {order_bad:?} (N=50: {:.3}/{:.3}/{:.3}/{:.3}ms)",
            cum(SecurityMode::None),
            cum(SecurityMode::AhOnly),
            cum(SecurityMode::EspOnly),
            cum(SecurityMode::Hybrid)
        ),
    ));
    checks.push((
        gap_bad.is_empty(),
        format!("hybrid-esp < ah-none violated at {gap_bad:?}"),
    ));
    checks.push((
        goodput_bad.is_empty(),
        format!("goodput none highest violated at {goodput_bad:?}"),
    ));
    Ok(Verdict::new(7, "security overhead", &checks))
}

/// Square side giving the node density of 50 nodes on the default area.
pub fn constant_density_side(nodes: u32) -> f64 {
    1000.0 * (f64::from(nodes) / 50.0).sqrt()
}

/// Sizes used for the static convergence check.
pub const CONVERGENCE_SIZES: [u32; 6] = [4, 7, 10, 20, 30, 40];

pub fn convergence_scenario(nodes: u32, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::shipped();
    cfg.nodes = nodes;
    cfg.seed = seed;
    cfg.cml.x = 0;
    cfg.mobility = MobilityConfig::stationary();
    let side = constant_density_side(nodes);
    cfg.area.width = side;
    cfg.area.height = side;
    cfg.placement.positions = harness::connected_placement(nodes, side, cfg.link.radius, seed);
    cfg
}

/// Twelve static nodes, two of which leave and rejoin every `period`.
pub fn hysteresis_scenario(seed: u64, period: f64) -> ScenarioConfig {
    let mut cfg = harness::static_grid(&ScenarioConfig::shipped(), 12);
    cfg.seed = seed;
    cfg.adversary = vec![AdversaryRole {
        node: 10,
        behavior: AdversaryBehavior::Oscillate {
            group: vec![10, 11],
            period,
            start: 0.0,
        },
    }];
    cfg
}

fn confirmed_shifts(out: &RunOutput) -> usize {
    out.transitions.iter().filter(|t| t.shift).count()
}

/// Smallest gap between consecutive confirmed shifts on one node.
pub fn min_shift_gap(out: &RunOutput) -> Option<f64> {
    harness::shifts_per_node(out)
        .values()
        .flat_map(|times| times.windows(2).map(|w| w[1] - w[0]))
        .reduce(f64::min)
}

/// Criterion 8: Static convergence with x = 0, hysteresis against a two-node
/// oscillating group, and the oscillation-timer rate limit.
pub fn phase_machine(sweeps: &[&SweepResult], parallel: usize) -> Result<Verdict, HarnessError> {
    let seeds: Vec<u64> = (1..=10).collect();
    let cells: Vec<ScenarioConfig> = CONVERGENCE_SIZES
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| convergence_scenario(n, s)))
        .collect();
    let conv = harness::run_cells(cells, parallel)?;
    let mut failed = Vec::new();
    for c in &conv {
        let want = if c.config.nodes <= c.config.cml.nst {
            StablePhase::Proactive
        } else {
            StablePhase::Reactive
        };
        if !c.output.final_phases.iter().all(|p| *p == Some(want)) {
            failed.push(format!("N={}/s{}", c.config.nodes, c.config.seed));
        }
    }
    let mut checks = vec![(
        failed.is_empty(),
        format!(
            "convergence {}/{} runs {failed:?}",
            conv.len() - failed.len(),
            conv.len()
        ),
    )];

    let hyst = harness::run_cells(
        (1..=5).map(|s| hysteresis_scenario(s, 20.0)).collect(),
        parallel,
    )?;
    let shifts: Vec<usize> = hyst.iter().map(|c| confirmed_shifts(&c.output)).collect();
    checks.push((
        shifts.iter().all(|&s| s == 0),
        format!("hysteresis shifts per seed {shifts:?}"),
    ));

    let t_osc = ScenarioConfig::shipped().cml.t_osc;
    let cml_runs = sweeps
        .iter()
        .flat_map(|s| s.cells.iter())
        .filter(|c| c.config.protocol == Protocol::Cml)
        .chain(conv.iter())
        .chain(hyst.iter());
    let (mut runs, mut min_gap) = (0, f64::INFINITY);
    for c in cml_runs {
        runs += 1;
        if let Some(g) = min_shift_gap(&c.output) {
            min_gap = min_gap.min(g);
        }
    }
    checks.push((
        min_gap >= t_osc,
        format!("min shift gap {min_gap:.2}s over {runs} runs"),
    ));
    Ok(Verdict::new(8, "phase machine", &checks))
}

fn attack_run(
    preset: &str,
    mode: SecurityMode,
) -> Result<(ScenarioConfig, RunOutput), HarnessError> {
    let mut cfg = harness::attack_preset(preset, &ScenarioConfig::shipped())?;
    cfg.security = mode;
    let out = crate::sim::run(&cfg).map_err(|source| HarnessError::Cell {
        cell: preset.to_string(),
        source,
    })?;
    Ok((cfg, out))
}

fn adversaries(cfg: &ScenarioConfig) -> Vec<NodeId> {
    cfg.adversary
        .iter()
        .flat_map(AdversaryRole::members)
        .collect()
}

/// Criterion 9: Adversary scenarios with and without SCML.
pub fn adversary_suite() -> Result<Verdict, HarnessError> {
    let (cfg, open) = attack_run("forge-cp", SecurityMode::None)?;
    let open_shifts = harness::adversary_shifts(&open, &adversaries(&cfg));
    let (cfg, guarded) = attack_run("forge-cp", SecurityMode::Hybrid)?;
    let guarded_shifts = harness::adversary_shifts(&guarded, &adversaries(&cfg));

    let (_, osc) = attack_run("oscillate", SecurityMode::None)?;
    let osc_shifts = confirmed_shifts(&osc);

    let (_, tampered) = attack_run("tamper-hcreq", SecurityMode::Hybrid)?;
    let mut clean_cfg = harness::attack_preset("tamper-hcreq", &ScenarioConfig::shipped())?;
    clean_cfg.security = SecurityMode::Hybrid;
    clean_cfg.adversary.clear();
    let clean = crate::sim::run(&clean_cfg).map_err(|source| HarnessError::Cell {
        cell: "tamper-clean".into(),
        source,
    })?;
    let (_, open_tamper) = attack_run("tamper-hcreq", SecurityMode::None)?;
    let same = tampered.transitions_log() == clean.transitions_log();
    let confirmations = |o: &RunOutput| {
        o.transitions
            .iter()
            .filter(|t| t.trigger.starts_with("confirmed"))
            .count()
    };

    Ok(Verdict::new(
        9,
        "adversary suite",
        &[
            (open_shifts >= 1, format!("forge-cp/none adversary shifts={open_shifts}")),
            (guarded_shifts == 0, format!("forge-cp/hybrid adversary shifts={guarded_shifts} rejected={}", guarded.metrics.security.rejected)),
            (osc_shifts == 0, format!("oscillate confirmed shifts={osc_shifts}")),
            (
                same && !tampered.transitions.is_empty(),
                format!(
                    "tamper-hcreq/hybrid transitions identical to clean run: {same} (confirmations {} vs {}, unprotected run {})",
                    confirmations(&tampered),
                    confirmations(&clean),
                    confirmations(&open_tamper)
                ),
            ),
        ],
    ))
}

/// Static OLSR scenario on `seed`'s random graph.
pub fn olsr_oracle_scenario(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::shipped();
    cfg.protocol = Protocol::Olsr;
    cfg.nodes = 10 + (seed % 31) as u32;
    cfg.seed = seed;
    cfg.duration = 40.0;
    cfg.warmup = 0.0;
    cfg.mobility = MobilityConfig::stationary();
    cfg.traffic.flows = Some(0);
    cfg
}

/// Nodes whose OLSR route disagrees with BFS, and nodes whose MPR set
/// misses a strict two-hop neighbour.
pub fn olsr_oracle(world: &World) -> (Vec<NodeId>, Vec<NodeId>) {
    let adj = world.adjacency();
    let (mut route_bad, mut mpr_bad) = (Vec::new(), Vec::new());
    for i in 0..adj.len() {
        let me = NodeId::from(i);
        let Router::Olsr(o) = world.router(me) else {
            continue;
        };
        let dist = bfs_distances(adj, me);
        if !olsr_routes_match(o, me, &dist) {
            route_bad.push(me);
        }
        let two_hop: Vec<NodeId> = (0..adj.len())
            .filter(|&j| dist[j] == Some(2))
            .map(NodeId::from)
            .collect();
        let mprs = o.mpr_set();
        let covered = two_hop
            .iter()
            .all(|t| mprs.iter().any(|m| adj[m.idx()].contains(t)));
        let valid = mprs.iter().all(|m| adj[i].contains(m));
        if !(covered && valid) {
            mpr_bad.push(me);
        }
    }
    (route_bad, mpr_bad)
}

fn olsr_routes_match(o: &OlsrState, me: NodeId, dist: &[Option<u32>]) -> bool {
    dist.iter().enumerate().all(|(j, d)| {
        let dest = NodeId::from(j);
        match (d, o.route(dest)) {
            _ if dest == me => true,
            (Some(d), Some(r)) => r.hops == *d,
            (None, None) => true,
            _ => false,
        }
    })
}

/// Static connected AODV scenario on the ideal channel. A single flow, so
/// its route comes from its own discovery rather than a reverse route left
/// by another node's flood.
pub fn aodv_oracle_scenario(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::shipped();
    cfg.protocol = Protocol::Aodv;
    cfg.nodes = 8 + (seed % 23) as u32;
    cfg.seed = seed;
    cfg.duration = 8.0;
    cfg.warmup = 0.0;
    cfg.mobility = MobilityConfig::stationary();
    cfg.channel = ChannelConfig::ideal();
    cfg.aodv.forward_jitter = 0.0;
    cfg.traffic.flows = Some(1);
    let side = constant_density_side(cfg.nodes);
    cfg.area.width = side;
    cfg.area.height = side;
    cfg.placement.positions = harness::connected_placement(cfg.nodes, side, cfg.link.radius, seed);
    cfg
}

/// Flows whose source route hop count differs from the BFS distance, and
/// the number of flows checked.
pub fn aodv_oracle(world: &World, now: f64) -> (Vec<u32>, usize) {
    let adj = world.adjacency();
    let out_flows = world.flows();
    let mut bad = Vec::new();
    for f in out_flows {
        let Router::Aodv(a) = world.router(f.source) else {
            continue;
        };
        let want = bfs_distances(adj, f.source)[f.destination.idx()];
        let got = AodvState::route(a, now, f.destination).map(|r| r.hops);
        if got.is_none() || got != want {
            bad.push(f.id);
        }
    }
    (bad, out_flows.len())
}

fn world_after(cfg: &ScenarioConfig) -> Result<World, HarnessError> {
    let mut w = World::new(cfg.clone()).map_err(|source| HarnessError::Cell {
        cell: "oracle".into(),
        source,
    })?;
    w.simulate();
    Ok(w)
}

/// Run-level determinism: byte-identical summary and transition log.
pub fn deterministic(cfg: &ScenarioConfig) -> Result<bool, HarnessError> {
    let a = harness::run_cells(vec![cfg.clone()], 1)?;
    let b = harness::run_cells(vec![cfg.clone()], 1)?;
    let text = |c: &[CellResult]| {
        (
            crate::metrics::summary_csv(&[c[0].output.summary.clone()]),
            c[0].output.transitions_log(),
        )
    };
    Ok(text(&a) == text(&b))
}

/// Criterion 10: Oracle and determinism suites.
pub fn oracles() -> Result<Verdict, HarnessError> {
    let (mut route_ok, mut mpr_ok) = (0, 0);
    for seed in 1..=100 {
        let w = world_after(&olsr_oracle_scenario(seed))?;
        let (r, m) = olsr_oracle(&w);
        route_ok += usize::from(r.is_empty());
        mpr_ok += usize::from(m.is_empty());
    }
    let (mut aodv_ok, mut flows) = (0, 0);
    for seed in 1..=100 {
        let cfg = aodv_oracle_scenario(seed);
        let w = world_after(&cfg)?;
        let (bad, n) = aodv_oracle(&w, cfg.duration);
        aodv_ok += usize::from(bad.is_empty());
        flows += n;
    }
    let mut det_cfg = ScenarioConfig::shipped();
    det_cfg.nodes = 20;
    let det = deterministic(&det_cfg)?;
    Ok(Verdict::new(
        10,
        "oracles and determinism",
        &[
            (
                route_ok == 100,
                format!("olsr routes == bfs on {route_ok}/100 graphs"),
            ),
            (
                mpr_ok == 100,
                format!("mpr two-hop coverage on {mpr_ok}/100 graphs"),
            ),
            (
                aodv_ok == 100,
                format!("aodv hops == bfs on {aodv_ok}/100 graphs ({flows} flows)"),
            ),
            (det, format!("cml N=20 repeated run byte-identical: {det}")),
        ],
    ))
}

/// Every criterion, in order.
pub fn evaluate_all(parallel: usize) -> Result<Report, HarnessError> {
    let cmp = comparison_sweep(parallel)?;
    let sec = security_sweep(parallel)?;
    let verdicts = vec![
        crossover(&cmp),
        cml_envelope(&cmp),
        dsr_worst(&cmp),
        jitter_ordering(&cmp),
        routing_load(&cmp),
        analytic(),
        security_overhead(&sec, parallel)?,
        phase_machine(&[&cmp, &sec], parallel)?,
        adversary_suite()?,
        oracles()?,
    ];
    Ok(Report { verdicts })
}
