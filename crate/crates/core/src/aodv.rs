//! Simplified AODV: flooded RREQ, destination-only unicast RREP, fixed
//! route lifetimes and no RERR. Broken next hops simply expire.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::kernel::EventHandle;
use crate::metrics::DropReason;
use crate::packet::{Body, Packet, RrepMsg, RreqMsg};
use crate::proto::{Ctx, Timer};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AodvConfig {
    pub node_traversal_time: f64,
    pub net_diameter: u32,
    pub active_route_timeout: f64,
    pub rreq_retries: u32,
    pub forward_jitter: f64,
    /// Data packets buffered per destination while a discovery runs.
    pub buffer_limit: usize,
    /// Invalidate routes through a neighbour when a unicast to it fails.
    pub link_layer_feedback: bool,
}

impl Default for AodvConfig {
    fn default() -> Self {
        Self {
            node_traversal_time: 0.04,
            net_diameter: 35,
            active_route_timeout: 10.0,
            rreq_retries: 2,
            forward_jitter: 0.01,
            buffer_limit: 64,
            link_layer_feedback: true,
        }
    }
}

impl AodvConfig {
    pub fn net_traversal_time(&self) -> f64 {
        2.0 * self.node_traversal_time * f64::from(self.net_diameter)
    }
}

/// Node-count estimate from a hop count: `round(k * h^2)`.
pub fn estimate_size_from_hops(max_hop_count: u32, k: f64) -> u32 {
    let h = f64::from(max_hop_count);
    (k * h * h).round() as u32
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AodvRoute {
    pub next_hop: NodeId,
    pub hops: u32,
    pub dest_seq: u32,
    pub expiry: f64,
}

#[derive(Debug)]
struct Pending {
    attempt: u32,
    timer: EventHandle,
    buffer: VecDeque<Packet>,
}

/// What a received RREQ led to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RreqOutcome {
    Duplicate,
    Relayed,
    Replied,
}

/// What a received RREP led to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrepOutcome {
    /// This node asked for the route; carries the installed hop count.
    AtSource {
        hops: u32,
    },
    Forwarded,
    Dropped,
}

#[derive(Debug)]
pub struct AodvState {
    me: NodeId,
    cfg: AodvConfig,
    gen: u32,
    table: BTreeMap<NodeId, AodvRoute>,
    own_seq: u32,
    rreq_id: u32,
    seen: BTreeMap<(NodeId, u32), f64>,
    pending: BTreeMap<NodeId, Pending>,
}

impl AodvState {
    pub fn new(me: NodeId, cfg: AodvConfig, gen: u32) -> Self {
        Self {
            me,
            cfg,
            gen,
            table: BTreeMap::new(),
            own_seq: 0,
            rreq_id: 0,
            seen: BTreeMap::new(),
            pending: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AodvConfig {
        &self.cfg
    }

    pub fn net_traversal_time(&self) -> f64 {
        self.cfg.net_traversal_time()
    }

    /// A route usable for forwarding at `now`.
    pub fn route(&self, now: f64, dest: NodeId) -> Option<AodvRoute> {
        self.table.get(&dest).copied().filter(|r| r.expiry > now)
    }

    pub fn valid_routes(&self, now: f64) -> impl Iterator<Item = (NodeId, AodvRoute)> + '_ {
        self.table
            .iter()
            .filter(move |(_, r)| r.expiry > now)
            .map(|(d, r)| (*d, *r))
    }

    pub fn max_valid_hops(&self, now: f64) -> u32 {
        self.valid_routes(now)
            .map(|(_, r)| r.hops)
            .max()
            .unwrap_or(0)
    }

    pub fn is_discovering(&self, dest: NodeId) -> bool {
        self.pending.contains_key(&dest)
    }

    /// Packets held for destinations still being discovered.
    pub fn buffered(&self) -> usize {
        self.pending.values().map(|p| p.buffer.len()).sum()
    }

    fn install(&mut self, now: f64, dest: NodeId, next_hop: NodeId, hops: u32, dest_seq: u32) {
        let expiry = now + self.cfg.active_route_timeout;
        let better = match self.table.get(&dest) {
            None => true,
            Some(r) if r.expiry <= now => true,
            Some(r) => seq_newer(dest_seq, r.dest_seq) || (dest_seq == r.dest_seq && hops < r.hops),
        };
        if better {
            self.table.insert(
                dest,
                AodvRoute {
                    next_hop,
                    hops,
                    dest_seq,
                    expiry,
                },
            );
        }
    }

    /// Sends or buffers a data packet; starts a discovery when no route is
    /// known and none is under way.
    pub fn route_data(&mut self, ctx: &mut Ctx, packet: Packet) {
        let Body::Data(d) = &packet.body else { return };
        let dest = d.destination;
        if let Some(r) = self.route(ctx.now, dest) {
            ctx.unicast(packet, r.next_hop);
            return;
        }
        if packet.origin != self.me {
            ctx.drop_data(packet, DropReason::NoRoute);
            return;
        }
        if let Some(p) = self.pending.get_mut(&dest) {
            if p.buffer.len() >= self.cfg.buffer_limit {
                ctx.drop_data(packet, DropReason::QueueOverflow);
            } else {
                p.buffer.push_back(packet);
            }
            return;
        }
        let timer = self.originate_rreq(ctx, dest, 0);
        self.pending.insert(
            dest,
            Pending {
                attempt: 0,
                timer,
                buffer: VecDeque::from([packet]),
            },
        );
    }

    /// Floods a fresh RREQ and arms the discovery timer.
    pub fn originate_rreq(&mut self, ctx: &mut Ctx, dest: NodeId, attempt: u32) -> EventHandle {
        self.rreq_id = self.rreq_id.wrapping_add(1);
        self.own_seq = self.own_seq.wrapping_add(1);
        self.seen.insert(
            (self.me, self.rreq_id),
            ctx.now + 2.0 * self.net_traversal_time(),
        );
        let dest_seq = self.table.get(&dest).map_or(0, |r| r.dest_seq);
        let msg = RreqMsg {
            origin: self.me,
            destination: dest,
            rreq_id: self.rreq_id,
            origin_seq: self.own_seq,
            dest_seq,
            hop_count: 0,
        };
        let p = ctx.packet(Body::Rreq(msg));
        ctx.broadcast(p, 0.0);
        ctx.timer(
            self.net_traversal_time(),
            Timer::AodvDiscovery {
                gen: self.gen,
                dest,
                attempt,
            },
        )
    }

    pub fn on_discovery_timer(&mut self, ctx: &mut Ctx, dest: NodeId, attempt: u32) {
        let Some(p) = self.pending.get(&dest) else {
            return;
        };
        if p.attempt != attempt {
            return;
        }
        if attempt < self.cfg.rreq_retries {
            let timer = self.originate_rreq(ctx, dest, attempt + 1);
            let p = self.pending.get_mut(&dest).expect("checked above");
            p.attempt = attempt + 1;
            p.timer = timer;
        } else if let Some(p) = self.pending.remove(&dest) {
            for pkt in p.buffer {
                ctx.drop_data(pkt, DropReason::DiscoveryFailed);
            }
        }
    }

    pub fn process_rreq(
        &mut self,
        ctx: &mut Ctx,
        packet: &Packet,
        prev_hop: NodeId,
    ) -> RreqOutcome {
        let Body::Rreq(m) = &packet.body else {
            return RreqOutcome::Duplicate;
        };
        let now = ctx.now;
        self.seen.retain(|_, exp| *exp > now);
        let key = (m.origin, m.rreq_id);
        if m.origin == self.me || self.seen.contains_key(&key) {
            return RreqOutcome::Duplicate;
        }
        self.seen.insert(key, now + 2.0 * self.net_traversal_time());
        let hops = m.hop_count + 1;
        self.install(now, prev_hop, prev_hop, 1, 0);
        self.install(now, m.origin, prev_hop, hops, m.origin_seq);
        if m.destination == self.me {
            self.own_seq = self.own_seq.max(m.dest_seq).wrapping_add(1);
            let rrep = RrepMsg {
                origin: m.origin,
                destination: self.me,
                dest_seq: self.own_seq,
                hop_count: 0,
            };
            let p = ctx.packet(Body::Rrep(rrep));
            ctx.unicast(p, prev_hop);
            return RreqOutcome::Replied;
        }
        let mut relay = packet.clone();
        if let Body::Rreq(r) = &mut relay.body {
            r.hop_count = hops;
        }
        let jitter = ctx.jitter(self.cfg.forward_jitter);
        ctx.broadcast(relay, jitter);
        RreqOutcome::Relayed
    }

    /// Installs the forward route; the hop count grows by one on receipt.
    pub fn process_rrep(&mut self, ctx: &mut Ctx, packet: Packet, prev_hop: NodeId) -> RrepOutcome {
        let Body::Rrep(m) = &packet.body else {
            return RrepOutcome::Dropped;
        };
        let now = ctx.now;
        let hops = m.hop_count + 1;
        let (origin, destination, dest_seq) = (m.origin, m.destination, m.dest_seq);
        self.install(now, prev_hop, prev_hop, 1, 0);
        self.install(now, destination, prev_hop, hops, dest_seq);
        if origin == self.me {
            if let Some(p) = self.pending.remove(&destination) {
                ctx.cancel(p.timer);
                for pkt in p.buffer {
                    self.route_data(ctx, pkt);
                }
            }
            return RrepOutcome::AtSource { hops };
        }
        match self.route(now, origin) {
            Some(r) => {
                let mut fwd = packet;
                if let Body::Rrep(m) = &mut fwd.body {
                    m.hop_count = hops;
                }
                ctx.unicast(fwd, r.next_hop);
                RrepOutcome::Forwarded
            }
            None => {
                ctx.drop_control(packet.kind(), DropReason::MissingReverseRoute);
                RrepOutcome::Dropped
            }
        }
    }

    /// Forwards or delivers a data packet heard from a neighbour.
    pub fn on_data(&mut self, ctx: &mut Ctx, packet: Packet) {
        let Body::Data(d) = &packet.body else { return };
        if d.destination == self.me {
            ctx.deliver(packet);
        } else {
            self.route_data(ctx, packet);
        }
    }

    pub fn on_link_failure(&mut self, ctx: &mut Ctx, packet: Packet, next_hop: NodeId) {
        if self.cfg.link_layer_feedback {
            let now = ctx.now;
            for r in self.table.values_mut() {
                if r.next_hop == next_hop {
                    r.expiry = r.expiry.min(now);
                }
            }
        }
        ctx.discard(packet, DropReason::LinkBroken);
    }

    /// Drops everything still buffered (used when the engine is retired).
    pub fn flush_pending(&mut self, ctx: &mut Ctx) {
        for (_, p) in std::mem::take(&mut self.pending) {
            ctx.cancel(p.timer);
            for pkt in p.buffer {
                ctx.drop_data(pkt, DropReason::NoRoute);
            }
        }
    }
}

fn seq_newer(a: u32, b: u32) -> bool {
    a != b && a.wrapping_sub(b) < u32::MAX / 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::DataMsg;
    use crate::proto::{Output, TestBed};

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    fn data(origin: u32, dest: u32) -> Packet {
        Packet::new(
            100,
            n(origin),
            Body::Data(DataMsg {
                flow: 0,
                seq: 0,
                send_time: 0.0,
                destination: n(dest),
                payload: 512,
                source_route: None,
            }),
        )
    }

    #[test]
    fn traversal_time_convention() {
        let c = AodvConfig::default();
        assert!((c.net_traversal_time() - 2.8).abs() < 1e-12);
        let one = AodvConfig {
            net_diameter: 1,
            ..c
        };
        assert!((one.net_traversal_time() - 0.08).abs() < 1e-12);
        let twice = AodvConfig {
            node_traversal_time: 0.08,
            ..c
        };
        assert!((twice.net_traversal_time() - 2.0 * c.net_traversal_time()).abs() < 1e-12);
    }

    #[test]
    fn size_estimate() {
        assert_eq!(estimate_size_from_hops(0, 1.0), 0);
        assert_eq!(estimate_size_from_hops(4, 1.0), 16);
        assert_eq!(estimate_size_from_hops(3, 1.0), 9);
        assert_eq!(estimate_size_from_hops(5, 0.4), 10);
    }

    #[test]
    fn no_route_starts_discovery_and_buffers() {
        let mut bed = TestBed::new();
        let mut s = AodvState::new(n(0), AodvConfig::default(), 0);
        let mut ctx = bed.ctx(0);
        s.route_data(&mut ctx, data(0, 5));
        s.route_data(&mut ctx, data(0, 5));
        let rreqs: Vec<_> = ctx
            .out
            .iter()
            .filter_map(|o| match o {
                Output::Broadcast { packet, .. } => match &packet.body {
                    Body::Rreq(r) => Some(r.clone()),
                    _ => None,
                },
                _ => None,
            })
            .collect();
        assert_eq!(rreqs.len(), 1, "one discovery per destination");
        assert_eq!(rreqs[0].hop_count, 0);
        assert_eq!(s.buffered(), 2);
    }

    #[test]
    fn valid_route_forwards_without_rreq() {
        let mut bed = TestBed::new();
        let mut s = AodvState::new(n(0), AodvConfig::default(), 0);
        let mut ctx = bed.ctx(0);
        s.install(0.0, n(5), n(1), 2, 1);
        s.route_data(&mut ctx, data(0, 5));
        assert!(matches!(&ctx.out[..], [Output::Unicast { next_hop, .. }] if *next_hop == n(1)));
    }

    #[test]
    fn expired_route_is_not_used() {
        let mut bed = TestBed::new();
        let mut s = AodvState::new(n(0), AodvConfig::default(), 0);
        s.install(0.0, n(5), n(1), 2, 1);
        bed.at(10.0);
        let mut ctx = bed.ctx(0);
        assert!(s.route(ctx.now, n(5)).is_none());
        s.route_data(&mut ctx, data(0, 5));
        assert!(matches!(&ctx.out[0], Output::Broadcast { .. }));
    }

    #[test]
    fn destination_replies_and_reverse_route_counts_hops() {
        let mut bed = TestBed::new();
        let mut s = AodvState::new(n(3), AodvConfig::default(), 0);
        let mut ctx = bed.ctx(3);
        let rreq = Packet::new(
            1,
            n(0),
            Body::Rreq(RreqMsg {
                origin: n(0),
                destination: n(3),
                rreq_id: 1,
                origin_seq: 1,
                dest_seq: 0,
                hop_count: 2,
            }),
        );
        assert_eq!(s.process_rreq(&mut ctx, &rreq, n(2)), RreqOutcome::Replied);
        assert_eq!(
            s.route(0.0, n(0)).map(|r| (r.next_hop, r.hops)),
            Some((n(2), 3))
        );
        assert!(
            matches!(&ctx.out[0], Output::Unicast { packet, next_hop } if *next_hop == n(2) && packet.kind() == crate::packet::PacketKind::Rrep)
        );
        assert_eq!(
            s.process_rreq(&mut ctx, &rreq, n(1)),
            RreqOutcome::Duplicate
        );
        assert_eq!(ctx.out.len(), 1);
    }

    #[test]
    fn relay_increments_hop_count() {
        let mut bed = TestBed::new();
        let mut s = AodvState::new(n(1), AodvConfig::default(), 0);
        let mut ctx = bed.ctx(1);
        let rreq = Packet::new(
            1,
            n(0),
            Body::Rreq(RreqMsg {
                origin: n(0),
                destination: n(3),
                rreq_id: 1,
                origin_seq: 1,
                dest_seq: 0,
                hop_count: 0,
            }),
        );
        assert_eq!(s.process_rreq(&mut ctx, &rreq, n(0)), RreqOutcome::Relayed);
        assert!(
            matches!(&ctx.out[0], Output::Broadcast { packet, .. } if matches!(&packet.body, Body::Rreq(r) if r.hop_count == 1))
        );
    }

    #[test]
    fn rrep_at_source_flushes_buffer() {
        let mut bed = TestBed::new();
        let mut s = AodvState::new(n(0), AodvConfig::default(), 0);
        let mut ctx = bed.ctx(0);
        s.route_data(&mut ctx, data(0, 3));
        ctx.out.clear();
        let rrep = Packet::new(
            2,
            n(3),
            Body::Rrep(RrepMsg {
                origin: n(0),
                destination: n(3),
                dest_seq: 1,
                hop_count: 1,
            }),
        );
        assert_eq!(
            s.process_rrep(&mut ctx, rrep, n(1)),
            RrepOutcome::AtSource { hops: 2 }
        );
        assert_eq!(s.buffered(), 0);
        assert!(matches!(&ctx.out[..], [Output::Unicast { next_hop, .. }] if *next_hop == n(1)));
        assert_eq!(s.max_valid_hops(0.0), 2);
    }

    #[test]
    fn rrep_without_reverse_route_is_dropped() {
        let mut bed = TestBed::new();
        let mut s = AodvState::new(n(1), AodvConfig::default(), 0);
        let mut ctx = bed.ctx(1);
        let rrep = Packet::new(
            2,
            n(3),
            Body::Rrep(RrepMsg {
                origin: n(0),
                destination: n(3),
                dest_seq: 1,
                hop_count: 0,
            }),
        );
        assert_eq!(s.process_rrep(&mut ctx, rrep, n(2)), RrepOutcome::Dropped);
        assert!(matches!(
            &ctx.out[..],
            [Output::DropControl {
                reason: DropReason::MissingReverseRoute,
                ..
            }]
        ));
    }

    #[test]
    fn discovery_gives_up_after_retries() {
        let mut bed = TestBed::new();
        let mut s = AodvState::new(n(0), AodvConfig::default(), 0);
        let mut ctx = bed.ctx(0);
        s.route_data(&mut ctx, data(0, 9));
        s.on_discovery_timer(&mut ctx, n(9), 0);
        s.on_discovery_timer(&mut ctx, n(9), 1);
        assert!(s.is_discovering(n(9)));
        s.on_discovery_timer(&mut ctx, n(9), 2);
        assert!(!s.is_discovering(n(9)));
        let rreqs = ctx
            .out
            .iter()
            .filter(|o| matches!(o, Output::Broadcast { .. }))
            .count();
        assert_eq!(rreqs, 3);
        assert!(matches!(
            ctx.out.last(),
            Some(Output::DropData {
                reason: DropReason::DiscoveryFailed,
                ..
            })
        ));
    }
}
