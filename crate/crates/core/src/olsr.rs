//! Simplified OLSR: periodic HELLO/TC, greedy MPR selection, MPR flooding
//! of TC messages and hop-count shortest paths.
//!
//! Differences from RFC 3626: no link hysteresis, no willingness, a single
//! interface and one HELLO format. Links are symmetric by construction of
//! the link model, so any HELLO heard implies a symmetric link.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::metrics::DropReason;
use crate::packet::{Body, HelloMsg, Packet, TcMsg};
use crate::proto::{Ctx, Timer};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OlsrConfig {
    pub hello_interval: f64,
    pub tc_interval: f64,
    /// Entries expire after `validity_factor` emission intervals.
    pub validity_factor: f64,
    /// Upper bound of the random jitter applied when relaying a TC.
    pub forward_jitter: f64,
    /// Treat a failed unicast (no link-layer ACK) as an immediate link loss.
    pub link_layer_feedback: bool,
}

impl Default for OlsrConfig {
    fn default() -> Self {
        Self {
            hello_interval: 2.0,
            tc_interval: 5.0,
            validity_factor: 3.0,
            forward_jitter: 0.01,
            link_layer_feedback: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub next_hop: NodeId,
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct TopologyEntry {
    advertised: BTreeSet<NodeId>,
    seq: u32,
    expiry: f64,
}

/// Result of handling a TC, used by CML's adaptive checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcOutcome {
    Fresh,
    Duplicate,
    Ignored,
}

#[derive(Debug, Clone)]
pub struct OlsrState {
    me: NodeId,
    cfg: OlsrConfig,
    gen: u32,
    one_hop: BTreeMap<NodeId, f64>,
    /// Neighbour → (its advertised neighbour list, expiry).
    two_hop: BTreeMap<NodeId, (BTreeSet<NodeId>, f64)>,
    mpr_set: BTreeSet<NodeId>,
    mpr_selectors: BTreeMap<NodeId, f64>,
    topology: BTreeMap<NodeId, TopologyEntry>,
    routes: BTreeMap<NodeId, Route>,
    tc_seq: u32,
    seen: BTreeMap<(NodeId, u32), f64>,
}

impl OlsrState {
    pub fn new(me: NodeId, cfg: OlsrConfig, gen: u32) -> Self {
        Self {
            me,
            cfg,
            gen,
            one_hop: BTreeMap::new(),
            two_hop: BTreeMap::new(),
            mpr_set: BTreeSet::new(),
            mpr_selectors: BTreeMap::new(),
            topology: BTreeMap::new(),
            routes: BTreeMap::new(),
            tc_seq: 0,
            seen: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &OlsrConfig {
        &self.cfg
    }

    fn hello_validity(&self) -> f64 {
        self.cfg.validity_factor * self.cfg.hello_interval
    }

    fn tc_validity(&self) -> f64 {
        self.cfg.validity_factor * self.cfg.tc_interval
    }

    /// Arms the first HELLO and TC emissions at random offsets.
    pub fn start(&mut self, ctx: &mut Ctx) {
        let h = ctx.rng.uniform(0.0, self.cfg.hello_interval);
        let t = ctx.rng.uniform(0.0, self.cfg.tc_interval);
        ctx.timer(h, Timer::OlsrHello { gen: self.gen });
        ctx.timer(t, Timer::OlsrTc { gen: self.gen });
    }

    pub fn one_hop(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.one_hop.keys().copied()
    }

    pub fn mpr_set(&self) -> &BTreeSet<NodeId> {
        &self.mpr_set
    }

    pub fn mpr_selectors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.mpr_selectors.keys().copied()
    }

    pub fn routes(&self) -> &BTreeMap<NodeId, Route> {
        &self.routes
    }

    pub fn route(&self, dest: NodeId) -> Option<Route> {
        self.routes.get(&dest).copied()
    }

    pub fn topology_origins(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.topology.keys().copied()
    }

    /// Distinct destinations in the routing table plus this node.
    pub fn reachable_count(&self) -> usize {
        self.routes.len() + 1
    }

    /// Strict two-hop neighbourhood: reachable through a neighbour, neither
    /// this node nor a neighbour itself.
    pub fn strict_two_hop(&self) -> BTreeSet<NodeId> {
        self.two_hop
            .values()
            .flat_map(|(set, _)| set.iter().copied())
            .filter(|n| *n != self.me && !self.one_hop.contains_key(n))
            .collect()
    }

    pub fn emit_hello(&self) -> HelloMsg {
        HelloMsg {
            neighbors: self.one_hop.keys().copied().collect(),
            mprs: self.mpr_set.iter().copied().collect(),
        }
    }

    /// TC advertising the current MPR selectors; `None` when nobody selected
    /// this node.
    pub fn emit_tc(&mut self) -> Option<TcMsg> {
        if self.mpr_selectors.is_empty() {
            return None;
        }
        self.tc_seq = self.tc_seq.wrapping_add(1);
        Some(TcMsg {
            advertised: self.mpr_selectors.keys().copied().collect(),
            seq: self.tc_seq,
            ttl: 255,
        })
    }

    fn purge(&mut self, now: f64) -> bool {
        let before = (
            self.one_hop.len(),
            self.two_hop.len(),
            self.mpr_selectors.len(),
            self.topology.len(),
        );
        self.one_hop.retain(|_, exp| *exp > now);
        let alive = &self.one_hop;
        self.two_hop
            .retain(|n, (_, exp)| *exp > now && alive.contains_key(n));
        self.mpr_selectors
            .retain(|n, exp| *exp > now && alive.contains_key(n));
        self.topology.retain(|_, e| e.expiry > now);
        self.seen.retain(|_, exp| *exp > now);
        let after = (
            self.one_hop.len(),
            self.two_hop.len(),
            self.mpr_selectors.len(),
            self.topology.len(),
        );
        before != after
    }

    fn refresh(&mut self) {
        self.mpr_set = self.select_mprs();
        self.compute_routes();
    }

    /// Expires stale state and recomputes MPRs and routes if anything went.
    pub fn expire(&mut self, now: f64) {
        if self.purge(now) {
            self.refresh();
        }
    }

    pub fn process_hello(&mut self, now: f64, sender: NodeId, msg: &HelloMsg) {
        self.purge(now);
        let validity = now + self.hello_validity();
        self.one_hop.insert(sender, validity);
        let listed: BTreeSet<NodeId> = msg
            .neighbors
            .iter()
            .copied()
            .filter(|n| *n != self.me)
            .collect();
        self.two_hop.insert(sender, (listed, validity));
        if msg.mprs.contains(&self.me) {
            self.mpr_selectors.insert(sender, validity);
        } else {
            self.mpr_selectors.remove(&sender);
        }
        self.refresh();
    }

    /// Greedy MPR cover: forced picks first, then the neighbour covering the
    /// most uncovered two-hop nodes; ties go to the lowest id.
    pub fn select_mprs(&self) -> BTreeSet<NodeId> {
        let targets = self.strict_two_hop();
        let mut mprs = BTreeSet::new();
        if targets.is_empty() {
            return mprs;
        }
        let cover = |n: &NodeId| -> BTreeSet<NodeId> {
            self.two_hop
                .get(n)
                .map(|(s, _)| s.intersection(&targets).copied().collect())
                .unwrap_or_default()
        };
        let covers: BTreeMap<NodeId, BTreeSet<NodeId>> =
            self.one_hop.keys().map(|n| (*n, cover(n))).collect();
        for t in &targets {
            let mut via = covers.iter().filter(|(_, c)| c.contains(t));
            if let (Some((n, _)), None) = (via.next(), via.next()) {
                mprs.insert(*n);
            }
        }
        let mut uncovered: BTreeSet<NodeId> = targets
            .iter()
            .copied()
            .filter(|t| !mprs.iter().any(|m| covers[m].contains(t)))
            .collect();
        while !uncovered.is_empty() {
            let best = covers
                .iter()
                .filter(|(n, _)| !mprs.contains(*n))
                .map(|(n, c)| (c.intersection(&uncovered).count(), *n))
                .filter(|(gain, _)| *gain > 0)
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            let Some((_, pick)) = best else { break };
            mprs.insert(pick);
            for t in &covers[&pick] {
                uncovered.remove(t);
            }
        }
        mprs
    }

    /// Hop-count shortest paths over the known links (breadth-first search);
    /// equal-length alternatives resolve to the lowest next-hop id.
    pub fn compute_routes(&mut self) {
        let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        let mut link = |a: NodeId, b: NodeId| {
            if a != b {
                adj.entry(a).or_default().insert(b);
                adj.entry(b).or_default().insert(a);
            }
        };
        for (n, (set, _)) in &self.two_hop {
            for m in set {
                link(*n, *m);
            }
        }
        for (origin, entry) in &self.topology {
            for m in &entry.advertised {
                link(*origin, *m);
            }
        }
        let mut routes: BTreeMap<NodeId, Route> = BTreeMap::new();
        let mut frontier: Vec<NodeId> = self.one_hop.keys().copied().collect();
        for n in &frontier {
            routes.insert(
                *n,
                Route {
                    next_hop: *n,
                    hops: 1,
                },
            );
        }
        let mut hops = 1;
        while !frontier.is_empty() {
            hops += 1;
            let mut next: BTreeMap<NodeId, NodeId> = BTreeMap::new();
            for u in &frontier {
                let nh = routes[u].next_hop;
                for v in adj.get(u).into_iter().flatten() {
                    if *v == self.me || routes.contains_key(v) {
                        continue;
                    }
                    next.entry(*v)
                        .and_modify(|cur| *cur = (*cur).min(nh))
                        .or_insert(nh);
                }
            }
            frontier = next.keys().copied().collect();
            for (v, nh) in next {
                routes.insert(v, Route { next_hop: nh, hops });
            }
        }
        self.routes = routes;
    }

    /// Handles a TC heard from `prev_hop`. Relays it when `prev_hop`
    /// selected this node as MPR.
    pub fn process_tc(&mut self, ctx: &mut Ctx, packet: &Packet, prev_hop: NodeId) -> TcOutcome {
        let Body::Tc(tc) = &packet.body else {
            return TcOutcome::Ignored;
        };
        self.purge(ctx.now);
        let origin = packet.origin;
        if origin == self.me || !self.one_hop.contains_key(&prev_hop) {
            return TcOutcome::Ignored;
        }
        if self.seen.contains_key(&(origin, tc.seq)) {
            return TcOutcome::Duplicate;
        }
        self.seen
            .insert((origin, tc.seq), ctx.now + self.tc_validity());
        let newer = self
            .topology
            .get(&origin)
            .is_none_or(|e| seq_newer(tc.seq, e.seq) || tc.seq == e.seq);
        if newer {
            self.topology.insert(
                origin,
                TopologyEntry {
                    advertised: tc.advertised.iter().copied().collect(),
                    seq: tc.seq,
                    expiry: ctx.now + self.tc_validity(),
                },
            );
            self.refresh();
        }
        if self.mpr_selectors.contains_key(&prev_hop) && tc.ttl > 1 {
            let mut relay = packet.clone();
            if let Body::Tc(t) = &mut relay.body {
                t.ttl -= 1;
            }
            let jitter = ctx.jitter(self.cfg.forward_jitter);
            ctx.broadcast(relay, jitter);
        }
        TcOutcome::Fresh
    }

    pub fn on_hello_timer(&mut self, ctx: &mut Ctx) {
        self.expire(ctx.now);
        let hello = self.emit_hello();
        let p = ctx.packet(Body::Hello(hello));
        ctx.broadcast(p, 0.0);
        let next = self.cfg.hello_interval - ctx.rng.uniform(0.0, self.cfg.hello_interval / 4.0);
        ctx.timer(next, Timer::OlsrHello { gen: self.gen });
    }

    pub fn on_tc_timer(&mut self, ctx: &mut Ctx) {
        self.expire(ctx.now);
        if let Some(tc) = self.emit_tc() {
            let p = ctx.packet(Body::Tc(tc));
            ctx.broadcast(p, 0.0);
        }
        let next = self.cfg.tc_interval - ctx.rng.uniform(0.0, self.cfg.tc_interval / 4.0);
        ctx.timer(next, Timer::OlsrTc { gen: self.gen });
    }

    /// Forwards (or originates) a data packet along the routing table.
    pub fn route_data(&mut self, ctx: &mut Ctx, packet: Packet) {
        self.expire(ctx.now);
        let Body::Data(d) = &packet.body else { return };
        match self.routes.get(&d.destination) {
            Some(r) => {
                let nh = r.next_hop;
                ctx.unicast(packet, nh);
            }
            None => ctx.drop_data(packet, DropReason::NoRoute),
        }
    }

    /// Dispatches a received frame. Returns the TC outcome when it was a TC.
    pub fn on_receive(&mut self, ctx: &mut Ctx, packet: Packet, from: NodeId) -> Option<TcOutcome> {
        match &packet.body {
            Body::Hello(h) => {
                self.process_hello(ctx.now, from, h);
                None
            }
            Body::Tc(_) => Some(self.process_tc(ctx, &packet, from)),
            Body::Data(d) => {
                if d.destination == self.me {
                    ctx.deliver(packet);
                } else {
                    self.route_data(ctx, packet);
                }
                None
            }
            _ => None,
        }
    }

    pub fn on_link_failure(&mut self, ctx: &mut Ctx, packet: Packet, next_hop: NodeId) {
        if self.cfg.link_layer_feedback && self.one_hop.remove(&next_hop).is_some() {
            self.two_hop.remove(&next_hop);
            self.mpr_selectors.remove(&next_hop);
            self.refresh();
        }
        ctx.discard(packet, DropReason::LinkBroken);
    }
}

fn seq_newer(a: u32, b: u32) -> bool {
    a != b && a.wrapping_sub(b) < u32::MAX / 2
}
