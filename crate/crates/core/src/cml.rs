//! ChaMeLeon: a per-node phase machine that runs OLSR in small networks and
//! AODV in large ones.
//!
//! A node leaves its stable phase only through the oscillation phase, which
//! re-checks the size estimate against a threshold widened by `x` nodes:
//! two further TC-triggered counts when testing p → r, two HCREQ probes
//! when testing r → p. A confirmed shift is announced with a flooded CP
//! packet and arms the oscillation timer, which blocks any further entry
//! into the oscillation phase for `t_osc` seconds.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aodv::{estimate_size_from_hops, AodvConfig, AodvState, RrepOutcome};
use crate::metrics::DropReason;
use crate::olsr::{OlsrConfig, OlsrState, TcOutcome};
use crate::packet::{Body, CpPacket, HcRepPacket, HcReqPacket, Packet, ProbeRef, StablePhase};
use crate::proto::{Ctx, Timer};
use crate::security::phase_serde;
use crate::NodeId;

fn default_initial() -> StablePhase {
    StablePhase::Proactive
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmlConfig {
    pub nst: u32,
    pub x: u32,
    pub t_osc: f64,
    pub k: f64,
    #[serde(with = "phase_serde")]
    pub initial_phase: StablePhase,
    /// The toward-r check gives up after this many TC intervals.
    pub guard_tc_intervals: f64,
    /// Each HCREQ probe waits this many network traversal times.
    pub probe_window_traversals: f64,
    pub forward_jitter: f64,
}

impl Default for CmlConfig {
    fn default() -> Self {
        Self {
            nst: 10,
            x: 2,
            t_osc: 30.0,
            k: 1.0,
            initial_phase: default_initial(),
            guard_tc_intervals: 3.0,
            probe_window_traversals: 4.0,
            forward_jitter: 0.01,
        }
    }
}

impl CmlConfig {
    pub fn nht(&self) -> u32 {
        derive_nht(self.nst, self.k)
    }

    /// Probe TTL used when testing a return to the proactive phase.
    pub fn nht_toward_p(&self) -> u32 {
        derive_nht(self.nst.saturating_sub(self.x).max(1), self.k)
    }
}

/// Hop threshold matching a node-count threshold under `N = k * h^2`.
pub fn derive_nht(nst_effective: u32, k: f64) -> u32 {
    ((f64::from(nst_effective) / k).sqrt().ceil() as u32).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CmlPhase {
    Stable(StablePhase),
    /// Testing a departure from p-phase; holds the counts seen so far.
    TowardR {
        counts: Vec<u32>,
    },
    /// Testing a departure from r-phase with probe `probe` (0 or 1).
    TowardP {
        probe: u8,
        probe_id: u32,
        replied: bool,
    },
}

impl CmlPhase {
    pub fn label(&self) -> &'static str {
        match self {
            CmlPhase::Stable(p) => p.label(),
            CmlPhase::TowardR { .. } => "o-phase(toward-r)",
            CmlPhase::TowardP { .. } => "o-phase(toward-p)",
        }
    }

    /// The stable phase whose engine is running.
    pub fn stable(&self) -> StablePhase {
        match self {
            CmlPhase::Stable(p) => *p,
            CmlPhase::TowardR { .. } => StablePhase::Proactive,
            CmlPhase::TowardP { .. } => StablePhase::Reactive,
        }
    }
}

#[derive(Debug)]
pub enum Engine {
    Olsr(OlsrState),
    Aodv(AodvState),
}

#[derive(Debug)]
pub struct CmlState {
    me: NodeId,
    cfg: CmlConfig,
    olsr_cfg: OlsrConfig,
    aodv_cfg: AodvConfig,
    phase: CmlPhase,
    engine: Engine,
    gen: u32,
    episode: u32,
    osc_until: f64,
    cp_seq: u32,
    seen_cp: BTreeSet<(NodeId, u32)>,
    probe_seq: u32,
    seen_hcreq: BTreeSet<(NodeId, u32)>,
    echoed: BTreeSet<ProbeRef>,
    echo_parents: BTreeMap<u32, ProbeRef>,
    /// Probe origin → (previous hop, expiry), learned from HCREQ floods.
    reverse: BTreeMap<NodeId, (NodeId, f64)>,
    shifts: Vec<f64>,
}

impl CmlState {
    pub fn new(me: NodeId, cfg: CmlConfig, olsr_cfg: OlsrConfig, aodv_cfg: AodvConfig) -> Self {
        let engine = match cfg.initial_phase {
            StablePhase::Proactive => Engine::Olsr(OlsrState::new(me, olsr_cfg, 0)),
            StablePhase::Reactive => Engine::Aodv(AodvState::new(me, aodv_cfg, 0)),
        };
        Self {
            me,
            cfg,
            olsr_cfg,
            aodv_cfg,
            phase: CmlPhase::Stable(cfg.initial_phase),
            engine,
            gen: 0,
            episode: 0,
            osc_until: f64::NEG_INFINITY,
            cp_seq: 0,
            seen_cp: BTreeSet::new(),
            probe_seq: 0,
            seen_hcreq: BTreeSet::new(),
            echoed: BTreeSet::new(),
            echo_parents: BTreeMap::new(),
            reverse: BTreeMap::new(),
            shifts: Vec::new(),
        }
    }

    pub fn start(&mut self, ctx: &mut Ctx) {
        if let Engine::Olsr(o) = &mut self.engine {
            o.start(ctx);
        }
    }

    pub fn phase(&self) -> &CmlPhase {
        &self.phase
    }

    pub fn stable_phase(&self) -> StablePhase {
        self.phase.stable()
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn config(&self) -> &CmlConfig {
        &self.cfg
    }

    /// Times of confirmed stable-phase changes.
    pub fn shift_times(&self) -> &[f64] {
        &self.shifts
    }

    pub fn timer_active(&self, now: f64) -> bool {
        now < self.osc_until
    }

    fn probe_window(&self) -> f64 {
        self.cfg.probe_window_traversals * self.aodv_cfg.net_traversal_time()
    }

    fn set_phase(&mut self, ctx: &mut Ctx, phase: CmlPhase, trigger: String, shift: bool) {
        let from = self.phase.label();
        let to = phase.label();
        self.phase = phase;
        ctx.transition(from, to, trigger, shift);
    }

    /// Commits to `target`: new engine from cold, oscillation timer armed.
    fn shift_to(&mut self, ctx: &mut Ctx, target: StablePhase, trigger: String) {
        self.set_phase(ctx, CmlPhase::Stable(target), trigger, true);
        self.osc_until = ctx.now + self.cfg.t_osc;
        self.shifts.push(ctx.now);
        self.gen += 1;
        if let Engine::Aodv(a) = &mut self.engine {
            a.flush_pending(ctx);
        }
        self.engine = match target {
            StablePhase::Proactive => {
                let mut o = OlsrState::new(self.me, self.olsr_cfg, self.gen);
                o.start(ctx);
                Engine::Olsr(o)
            }
            StablePhase::Reactive => Engine::Aodv(AodvState::new(self.me, self.aodv_cfg, self.gen)),
        };
    }

    fn confirm(&mut self, ctx: &mut Ctx, target: StablePhase, trigger: String) {
        self.cp_seq = self.cp_seq.wrapping_add(1);
        self.seen_cp.insert((self.me, self.cp_seq));
        let cp = CpPacket {
            origin: self.me,
            target,
            seq: self.cp_seq,
        };
        let p = ctx.packet(Body::Cp(cp));
        ctx.broadcast(p, 0.0);
        self.shift_to(ctx, target, trigger);
    }

    fn resume(&mut self, ctx: &mut Ctx, trigger: &str) {
        let back = self.phase.stable();
        self.set_phase(ctx, CmlPhase::Stable(back), trigger.to_string(), false);
    }

    /// Adaptive check and toward-r confirmation, run on every fresh TC.
    pub fn on_tc(&mut self, ctx: &mut Ctx) {
        let Engine::Olsr(o) = &self.engine else {
            return;
        };
        let count = o.reachable_count() as u32;
        match &mut self.phase {
            CmlPhase::Stable(StablePhase::Proactive) => {
                if count > self.cfg.nst && !self.timer_active(ctx.now) {
                    self.episode += 1;
                    let guard = self.cfg.guard_tc_intervals * self.olsr_cfg.tc_interval;
                    ctx.timer(
                        guard,
                        Timer::CmlGuard {
                            episode: self.episode,
                        },
                    );
                    self.set_phase(
                        ctx,
                        CmlPhase::TowardR { counts: Vec::new() },
                        format!("tc-count={count}"),
                        false,
                    );
                }
            }
            CmlPhase::TowardR { counts } => {
                counts.push(count);
                let done = counts.len() >= 2;
                if count > self.cfg.nst + self.cfg.x {
                    self.confirm(
                        ctx,
                        StablePhase::Reactive,
                        format!("confirmed tc-count={count}"),
                    );
                } else if done {
                    self.resume(ctx, "resumed tc-counts");
                }
            }
            _ => {}
        }
    }

    pub fn on_guard(&mut self, ctx: &mut Ctx, episode: u32) {
        if episode == self.episode && matches!(self.phase, CmlPhase::TowardR { .. }) {
            self.resume(ctx, "resumed tc-timeout");
        }
    }

    /// Adaptive check run when an RREP reaches the node that asked for it.
    pub fn on_rrep_at_source(&mut self, ctx: &mut Ctx, hops: u32) {
        if self.phase != CmlPhase::Stable(StablePhase::Reactive) || self.timer_active(ctx.now) {
            return;
        }
        let Engine::Aodv(a) = &self.engine else {
            return;
        };
        let h = hops.max(a.max_valid_hops(ctx.now));
        let estimate = estimate_size_from_hops(h, self.cfg.k);
        if estimate <= self.cfg.nst {
            self.episode += 1;
            let probe_id = self.next_probe_id();
            self.set_phase(
                ctx,
                CmlPhase::TowardP {
                    probe: 0,
                    probe_id,
                    replied: false,
                },
                format!("rrep-estimate={estimate}"),
                false,
            );
            self.send_probe(ctx, probe_id, 0);
        }
    }

    fn next_probe_id(&mut self) -> u32 {
        self.probe_seq = self.probe_seq.wrapping_add(1);
        self.probe_seq
    }

    fn send_probe(&mut self, ctx: &mut Ctx, probe_id: u32, probe: u8) {
        self.seen_hcreq.insert((self.me, probe_id));
        let req = HcReqPacket {
            origin: self.me,
            probe_id,
            ttl: self.cfg.nht_toward_p(),
            travelled: 0,
            echo_parent: None,
        };
        let p = ctx.packet(Body::HcReq(req));
        ctx.broadcast(p, 0.0);
        ctx.timer(
            self.probe_window(),
            Timer::CmlProbeWindow {
                episode: self.episode,
                probe,
            },
        );
    }

    pub fn on_probe_window(&mut self, ctx: &mut Ctx, episode: u32, probe: u8) {
        if episode != self.episode {
            return;
        }
        let CmlPhase::TowardP {
            probe: current,
            replied,
            ..
        } = self.phase
        else {
            return;
        };
        if current != probe {
            return;
        }
        if !replied {
            self.confirm(
                ctx,
                StablePhase::Proactive,
                format!("confirmed silent-probe={}", probe + 1),
            );
        } else if probe == 0 {
            let probe_id = self.next_probe_id();
            self.phase = CmlPhase::TowardP {
                probe: 1,
                probe_id,
                replied: false,
            };
            self.send_probe(ctx, probe_id, 1);
        } else {
            self.resume(ctx, "resumed hcrep-both");
        }
    }

    /// Change Phase flood: relay once, then follow unless the oscillation
    /// timer forbids entering the o-phase.
    pub fn process_cp(&mut self, ctx: &mut Ctx, packet: &Packet) {
        let Body::Cp(cp) = &packet.body else { return };
        if !self.seen_cp.insert((cp.origin, cp.seq)) {
            return;
        }
        let jitter = ctx.jitter(self.cfg.forward_jitter);
        ctx.broadcast(packet.clone(), jitter);
        let trigger = format!("cp origin={} seq={}", cp.origin, cp.seq);
        match &self.phase {
            CmlPhase::Stable(p) if *p == cp.target => {}
            CmlPhase::Stable(_) => {
                if self.timer_active(ctx.now) {
                    return;
                }
                self.episode += 1;
                let o = match cp.target {
                    StablePhase::Reactive => CmlPhase::TowardR { counts: Vec::new() },
                    StablePhase::Proactive => CmlPhase::TowardP {
                        probe: 0,
                        probe_id: 0,
                        replied: false,
                    },
                };
                self.set_phase(ctx, o, trigger.clone(), false);
                self.shift_to(ctx, cp.target, trigger);
            }
            o if o.stable() != cp.target => {
                self.episode += 1;
                self.shift_to(ctx, cp.target, trigger);
            }
            _ => {}
        }
    }

    fn unicast_toward(&mut self, ctx: &mut Ctx, packet: Packet, to: NodeId) {
        if let Some(&(nh, exp)) = self.reverse.get(&to) {
            if exp > ctx.now {
                ctx.unicast(packet, nh);
                return;
            }
        }
        let fallback = match &self.engine {
            Engine::Aodv(a) => a.route(ctx.now, to).map(|r| r.next_hop),
            Engine::Olsr(o) => o.route(to).map(|r| r.next_hop),
        };
        match fallback {
            Some(nh) => ctx.unicast(packet, nh),
            None => ctx.drop_control(packet.kind(), DropReason::MissingReverseRoute),
        }
    }

    pub fn process_hcreq(&mut self, ctx: &mut Ctx, packet: &Packet, prev_hop: NodeId) {
        let Body::HcReq(req) = &packet.body else {
            return;
        };
        if req.origin == self.me || !self.seen_hcreq.insert((req.origin, req.probe_id)) {
            return;
        }
        let expiry = ctx.now + 2.0 * self.probe_window();
        self.reverse.insert(req.origin, (prev_hop, expiry));
        if req.ttl == 0 {
            let rep = HcRepPacket {
                responder: self.me,
                to: req.origin,
                probe_id: req.probe_id,
                is_echo_reply: false,
            };
            let p = ctx.packet(Body::HcRep(rep));
            self.unicast_toward(ctx, p, req.origin);
            return;
        }
        let mut relay = packet.clone();
        if let Body::HcReq(r) = &mut relay.body {
            r.ttl -= 1;
            r.travelled += 1;
        }
        let jitter = ctx.jitter(self.cfg.forward_jitter);
        ctx.broadcast(relay, jitter);
        let parent = ProbeRef {
            origin: req.origin,
            probe_id: req.probe_id,
        };
        if !req.is_echo() && self.echoed.insert(parent) {
            let probe_id = self.next_probe_id();
            self.seen_hcreq.insert((self.me, probe_id));
            self.echo_parents.insert(probe_id, parent);
            let echo = HcReqPacket {
                origin: self.me,
                probe_id,
                ttl: req.ttl + req.travelled,
                travelled: 0,
                echo_parent: Some(parent),
            };
            let p = ctx.packet(Body::HcReq(echo));
            let jitter = ctx.jitter(self.cfg.forward_jitter);
            ctx.broadcast(p, jitter);
        }
    }

    pub fn process_hcrep(&mut self, ctx: &mut Ctx, packet: Packet) {
        let Body::HcRep(rep) = &packet.body else {
            return;
        };
        if rep.to != self.me {
            let to = rep.to;
            self.unicast_toward(ctx, packet, to);
            return;
        }
        if let CmlPhase::TowardP {
            probe_id, replied, ..
        } = &mut self.phase
        {
            if *probe_id == rep.probe_id {
                *replied = true;
                return;
            }
        }
        if let Some(parent) = self.echo_parents.get(&rep.probe_id).copied() {
            let fwd = HcRepPacket {
                responder: rep.responder,
                to: parent.origin,
                probe_id: parent.probe_id,
                is_echo_reply: true,
            };
            let p = ctx.packet(Body::HcRep(fwd));
            self.unicast_toward(ctx, p, parent.origin);
        } else if rep.probe_id > self.probe_seq {
            ctx.drop_control(packet.kind(), DropReason::UnknownEchoParent);
        }
    }

    pub fn route_data(&mut self, ctx: &mut Ctx, packet: Packet) {
        match &mut self.engine {
            Engine::Olsr(o) => o.route_data(ctx, packet),
            Engine::Aodv(a) => a.route_data(ctx, packet),
        }
    }

    pub fn on_receive(&mut self, ctx: &mut Ctx, packet: Packet, from: NodeId) {
        match &packet.body {
            Body::Cp(_) => self.process_cp(ctx, &packet),
            Body::HcReq(_) => self.process_hcreq(ctx, &packet, from),
            Body::HcRep(_) => self.process_hcrep(ctx, packet),
            Body::Hello(_) | Body::Tc(_) => {
                if let Engine::Olsr(o) = &mut self.engine {
                    if o.on_receive(ctx, packet, from) == Some(TcOutcome::Fresh) {
                        self.on_tc(ctx);
                    }
                }
            }
            Body::Rreq(_) => {
                if let Engine::Aodv(a) = &mut self.engine {
                    a.process_rreq(ctx, &packet, from);
                }
            }
            Body::Rrep(_) => {
                if let Engine::Aodv(a) = &mut self.engine {
                    if let RrepOutcome::AtSource { hops } = a.process_rrep(ctx, packet, from) {
                        self.on_rrep_at_source(ctx, hops);
                    }
                }
            }
            Body::Data(d) => {
                if d.destination == self.me {
                    ctx.deliver(packet);
                } else {
                    self.route_data(ctx, packet);
                }
            }
            Body::DsrRreq(_) | Body::DsrRrep(_) | Body::DsrRerr(_) => {}
        }
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx, timer: Timer) {
        match (timer, &mut self.engine) {
            (Timer::OlsrHello { gen }, Engine::Olsr(o)) if gen == self.gen => o.on_hello_timer(ctx),
            (Timer::OlsrTc { gen }, Engine::Olsr(o)) if gen == self.gen => o.on_tc_timer(ctx),
            (Timer::AodvDiscovery { gen, dest, attempt }, Engine::Aodv(a)) if gen == self.gen => {
                a.on_discovery_timer(ctx, dest, attempt)
            }
            (Timer::CmlGuard { episode }, _) => self.on_guard(ctx, episode),
            (Timer::CmlProbeWindow { episode, probe }, _) => {
                self.on_probe_window(ctx, episode, probe)
            }
            _ => {}
        }
    }

    pub fn on_link_failure(&mut self, ctx: &mut Ctx, packet: Packet, next_hop: NodeId) {
        match &mut self.engine {
            Engine::Olsr(o) => o.on_link_failure(ctx, packet, next_hop),
            Engine::Aodv(a) => a.on_link_failure(ctx, packet, next_hop),
        }
    }
}
