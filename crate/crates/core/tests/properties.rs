//! Property suites over protocol state machines and whole runs.

use std::collections::BTreeSet;

use emanet_sim::aodv::estimate_size_from_hops;
use emanet_sim::cml::derive_nht;
use emanet_sim::config::{MobilityConfig, Protocol};
use emanet_sim::harness::bfs_distances;
use emanet_sim::olsr::{OlsrConfig, OlsrState};
use emanet_sim::packet::HelloMsg;
use emanet_sim::sim::{run, RunOutput};
use emanet_sim::{NodeId, ScenarioConfig};
use proptest::prelude::*;

/// Symmetric random graph from an upper-triangle bit mask.
fn graph(n: usize, bits: &[bool]) -> Vec<Vec<NodeId>> {
    let mut adj = vec![Vec::new(); n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if bits[k % bits.len()] {
                adj[i].push(NodeId::from(j));
                adj[j].push(NodeId::from(i));
            }
            k += 1;
        }
    }
    adj
}

fn hello_from(adj: &[Vec<NodeId>], sender: usize) -> HelloMsg {
    HelloMsg {
        neighbors: adj[sender].clone(),
        mprs: Vec::new(),
    }
}

fn transitions_chain(out: &RunOutput) -> bool {
    let mut last: Vec<Option<&str>> = vec![None; out.final_phases.len()];
    out.transitions.iter().all(|t| {
        let ok = last[t.node.idx()].is_none_or(|prev| prev == t.from);
        last[t.node.idx()] = Some(t.to);
        ok
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mprs_cover_every_strict_two_hop_neighbour(n in 2usize..25, bits in proptest::collection::vec(any::<bool>(), 1..300)) {
        let adj = graph(n, &bits);
        for me in 0..n {
            let mut s = OlsrState::new(NodeId::from(me), OlsrConfig::default(), 0);
            for nb in &adj[me] {
                s.process_hello(0.0, *nb, &hello_from(&adj, nb.idx()));
            }
            let mprs = s.select_mprs();
            let dist = bfs_distances(&adj, NodeId::from(me));
            let two_hop: BTreeSet<NodeId> = (0..n).filter(|&j| dist[j] == Some(2)).map(NodeId::from).collect();
            prop_assert_eq!(s.strict_two_hop(), two_hop.clone());
            prop_assert!(mprs.iter().all(|m| adj[me].contains(m)));
            for t in &two_hop {
                prop_assert!(mprs.iter().any(|m| adj[m.idx()].contains(t)), "{} uncovered at {}", t, me);
            }
        }
    }

    #[test]
    fn nht_is_the_least_sufficient_hop_count(nst in 1u32..200, k in 0.05f64..5.0) {
        let h = derive_nht(nst, k);
        let covers = |h: u32| k * f64::from(h).powi(2) >= f64::from(nst) * (1.0 - 1e-12);
        prop_assert!(covers(h));
        prop_assert!(h == 1 || !covers(h - 1));
    }

    #[test]
    fn size_estimate_is_monotone(h in 0u32..60, k in 0.05f64..5.0) {
        prop_assert!(estimate_size_from_hops(h, k) <= estimate_size_from_hops(h + 1, k));
        prop_assert_eq!(estimate_size_from_hops(0, k), 0);
    }
}

fn small_run(protocol: Protocol, nodes: u32, seed: u64, stationary: bool) -> RunOutput {
    let mut cfg = ScenarioConfig::shipped();
    cfg.protocol = protocol;
    cfg.nodes = nodes;
    cfg.seed = seed;
    cfg.duration = 120.0;
    cfg.warmup = 20.0;
    if stationary {
        cfg.mobility = MobilityConfig::stationary();
    }
    run(&cfg).expect("valid scenario")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_respect_accounting_invariants(
        protocol in prop::sample::select(Protocol::ALL.to_vec()),
        nodes in 3u32..25,
        seed in 0u64..1000,
        stationary in any::<bool>(),
    ) {
        let out = small_run(protocol, nodes, seed, stationary);
        let s = &out.summary;
        prop_assert!(s.data_delivered <= s.data_sent);
        prop_assert!(out.metrics.deliveries().all(|d| d.recv_time >= d.send_time && d.hops >= 1));
        prop_assert!(out.metrics.deliveries().all(|d| d.security_delay == 0.0));
        if let Some(j) = s.avg_jitter {
            prop_assert!(j >= 0.0);
        }
        prop_assert!(transitions_chain(&out));
        if protocol != Protocol::Cml {
            prop_assert!(out.transitions.is_empty());
            prop_assert!(out.final_phases.iter().all(Option::is_none));
        }
    }

    #[test]
    fn cml_shifts_respect_the_oscillation_timer(nodes in 8u32..30, seed in 0u64..1000) {
        let out = small_run(Protocol::Cml, nodes, seed, false);
        let t_osc = ScenarioConfig::shipped().cml.t_osc;
        prop_assert!(emanet_sim::acceptance::min_shift_gap(&out).is_none_or(|g| g >= t_osc));
        prop_assert!(transitions_chain(&out));
    }
}
