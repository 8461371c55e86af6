//! Minimal DSR: route-record flooding, a small path cache, source-routed
//! data and route errors sent back along the traversed prefix.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::metrics::DropReason;
use crate::packet::{Body, DsrRerr, DsrRrep, DsrRreq, Packet, SourceRoute};
use crate::proto::{Ctx, Timer};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsrConfig {
    pub cache_paths: usize,
    pub cache_expiry: f64,
    /// First re-request delay; doubles per attempt up to `max_request_period`.
    pub request_period: f64,
    pub max_request_period: f64,
    pub send_buffer_timeout: f64,
    pub buffer_limit: usize,
    pub forward_jitter: f64,
}

impl Default for DsrConfig {
    fn default() -> Self {
        Self {
            cache_paths: 3,
            cache_expiry: 30.0,
            request_period: 0.5,
            max_request_period: 10.0,
            send_buffer_timeout: 30.0,
            buffer_limit: 64,
            forward_jitter: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CachedPath {
    path: Vec<NodeId>,
    expiry: f64,
}

#[derive(Debug, Default)]
struct Pending {
    attempt: u32,
    buffer: VecDeque<(f64, Packet)>,
}

#[derive(Debug)]
pub struct DsrState {
    me: NodeId,
    cfg: DsrConfig,
    cache: BTreeMap<NodeId, Vec<CachedPath>>,
    rreq_id: u32,
    seen: BTreeSet<(NodeId, u32)>,
    pending: BTreeMap<NodeId, Pending>,
}

fn is_simple(path: &[NodeId]) -> bool {
    let set: BTreeSet<_> = path.iter().collect();
    set.len() == path.len()
}

fn has_link(path: &[NodeId], a: NodeId, b: NodeId) -> bool {
    path.windows(2)
        .any(|w| (w[0] == a && w[1] == b) || (w[0] == b && w[1] == a))
}

impl DsrState {
    pub fn new(me: NodeId, cfg: DsrConfig) -> Self {
        Self {
            me,
            cfg,
            cache: BTreeMap::new(),
            rreq_id: 0,
            seen: BTreeSet::new(),
            pending: BTreeMap::new(),
        }
    }

    /// Adds `path` (which must start here) to the cache, shortest first.
    pub fn cache_path(&mut self, now: f64, path: Vec<NodeId>) {
        if path.len() < 2 || path[0] != self.me || !is_simple(&path) {
            return;
        }
        let dest = *path.last().expect("nonempty");
        let expiry = now + self.cfg.cache_expiry;
        let entries = self.cache.entry(dest).or_default();
        entries.retain(|c| c.expiry > now);
        if let Some(c) = entries.iter_mut().find(|c| c.path == path) {
            c.expiry = expiry;
            return;
        }
        entries.push(CachedPath { path, expiry });
        entries.sort_by_key(|c| c.path.len());
        entries.truncate(self.cfg.cache_paths);
    }

    pub fn cached_route(&self, now: f64, dest: NodeId) -> Option<&[NodeId]> {
        self.cache
            .get(&dest)?
            .iter()
            .find(|c| c.expiry > now)
            .map(|c| c.path.as_slice())
    }

    pub fn cached_paths(&self, dest: NodeId) -> usize {
        self.cache.get(&dest).map_or(0, Vec::len)
    }

    /// Removes every cached path using the link `a`–`b`.
    pub fn purge_link(&mut self, a: NodeId, b: NodeId) {
        for entries in self.cache.values_mut() {
            entries.retain(|c| !has_link(&c.path, a, b));
        }
        self.cache.retain(|_, v| !v.is_empty());
    }

    pub fn is_discovering(&self, dest: NodeId) -> bool {
        self.pending.contains_key(&dest)
    }

    pub fn buffered(&self) -> usize {
        self.pending.values().map(|p| p.buffer.len()).sum()
    }

    fn send_along(&self, ctx: &mut Ctx, mut packet: Packet, path: &[NodeId]) {
        if let Body::Data(d) = &mut packet.body {
            d.source_route = Some(SourceRoute {
                path: path.to_vec(),
                cursor: 0,
            });
        }
        ctx.unicast(packet, path[1]);
    }

    /// Originates a data packet: source-route it or buffer and discover.
    pub fn route_data(&mut self, ctx: &mut Ctx, packet: Packet) {
        let Body::Data(d) = &packet.body else { return };
        let dest = d.destination;
        if let Some(path) = self.cached_route(ctx.now, dest).map(<[NodeId]>::to_vec) {
            self.send_along(ctx, packet, &path);
            return;
        }
        let entry = self.pending.entry(dest).or_default();
        if entry.buffer.len() >= self.cfg.buffer_limit {
            ctx.drop_data(packet, DropReason::QueueOverflow);
            return;
        }
        let fresh = entry.buffer.is_empty() && entry.attempt == 0;
        entry.buffer.push_back((ctx.now, packet));
        if fresh {
            self.dsr_discover(ctx, dest);
        }
    }

    /// Floods a route request and arms the retry timer.
    pub fn dsr_discover(&mut self, ctx: &mut Ctx, dest: NodeId) {
        self.rreq_id = self.rreq_id.wrapping_add(1);
        self.seen.insert((self.me, self.rreq_id));
        let attempt = self.pending.get(&dest).map_or(0, |p| p.attempt);
        let rreq = DsrRreq {
            origin: self.me,
            destination: dest,
            rreq_id: self.rreq_id,
            record: vec![self.me],
        };
        let p = ctx.packet(Body::DsrRreq(rreq));
        ctx.broadcast(p, 0.0);
        let wait =
            (self.cfg.request_period * 2f64.powi(attempt as i32)).min(self.cfg.max_request_period);
        ctx.timer(wait, Timer::DsrDiscovery { dest, attempt });
    }

    fn expire_buffer(&mut self, ctx: &mut Ctx, dest: NodeId) {
        let Some(p) = self.pending.get_mut(&dest) else {
            return;
        };
        let limit = self.cfg.send_buffer_timeout;
        while p.buffer.front().is_some_and(|(t, _)| ctx.now - t >= limit) {
            let (_, pkt) = p.buffer.pop_front().expect("front exists");
            ctx.drop_data(pkt, DropReason::BufferTimeout);
        }
    }

    pub fn on_discovery_timer(&mut self, ctx: &mut Ctx, dest: NodeId, attempt: u32) {
        match self.pending.get(&dest) {
            Some(p) if p.attempt == attempt => {}
            _ => return,
        }
        self.expire_buffer(ctx, dest);
        if self.pending[&dest].buffer.is_empty() {
            self.pending.remove(&dest);
            return;
        }
        self.pending.get_mut(&dest).expect("present").attempt = attempt + 1;
        self.dsr_discover(ctx, dest);
    }

    fn flush(&mut self, ctx: &mut Ctx, dest: NodeId) {
        let Some(p) = self.pending.remove(&dest) else {
            return;
        };
        for (t, pkt) in p.buffer {
            if ctx.now - t >= self.cfg.send_buffer_timeout {
                ctx.drop_data(pkt, DropReason::BufferTimeout);
            } else {
                self.route_data(ctx, pkt);
            }
        }
    }

    pub fn process_rreq(&mut self, ctx: &mut Ctx, packet: &Packet) {
        let Body::DsrRreq(r) = &packet.body else {
            return;
        };
        if r.origin == self.me || r.record.contains(&self.me) {
            return;
        }
        if r.destination == self.me {
            let mut route = r.record.clone();
            route.push(self.me);
            let back: Vec<NodeId> = route.iter().rev().copied().collect();
            self.cache_path(ctx.now, back);
            let cursor = route.len() - 1;
            let next = route[cursor - 1];
            let p = ctx.packet(Body::DsrRrep(DsrRrep { route, cursor }));
            ctx.unicast(p, next);
            return;
        }
        if !self.seen.insert((r.origin, r.rreq_id)) {
            return;
        }
        let mut relay = packet.clone();
        if let Body::DsrRreq(r) = &mut relay.body {
            r.record.push(self.me);
        }
        let jitter = ctx.jitter(self.cfg.forward_jitter);
        ctx.broadcast(relay, jitter);
    }

    pub fn process_rrep(&mut self, ctx: &mut Ctx, packet: Packet) {
        let Body::DsrRrep(r) = &packet.body else {
            return;
        };
        let Some(c) = r.route.iter().position(|n| *n == self.me) else {
            ctx.drop_control(packet.kind(), DropReason::BadSourceRoute);
            return;
        };
        self.cache_path(ctx.now, r.route[c..].to_vec());
        if c == 0 {
            let dest = *r.route.last().expect("nonempty");
            self.flush(ctx, dest);
            return;
        }
        let next = r.route[c - 1];
        let mut fwd = packet;
        if let Body::DsrRrep(r) = &mut fwd.body {
            r.cursor = c - 1;
        }
        ctx.unicast(fwd, next);
    }

    pub fn process_rerr(&mut self, ctx: &mut Ctx, packet: Packet) {
        let Body::DsrRerr(e) = &packet.body else {
            return;
        };
        let (a, b) = e.broken;
        self.purge_link(a, b);
        let Some(c) = e.back.iter().position(|n| *n == self.me) else {
            return;
        };
        if c + 1 < e.back.len() {
            let next = e.back[c + 1];
            let mut fwd = packet;
            if let Body::DsrRerr(e) = &mut fwd.body {
                e.cursor = c + 1;
            }
            ctx.unicast(fwd, next);
        }
    }

    /// Handles a source-routed data packet arriving here.
    pub fn dsr_forward(&mut self, ctx: &mut Ctx, packet: Packet) {
        let Body::Data(d) = &packet.body else { return };
        let Some(route) = &d.source_route else {
            ctx.drop_data(packet, DropReason::BadSourceRoute);
            return;
        };
        let Some(c) = route.path.iter().position(|n| *n == self.me) else {
            ctx.drop_data(packet, DropReason::BadSourceRoute);
            return;
        };
        if c + 1 == route.path.len() {
            ctx.deliver(packet);
            return;
        }
        let next = route.path[c + 1];
        let mut fwd = packet;
        if let Body::Data(d) = &mut fwd.body {
            if let Some(r) = &mut d.source_route {
                r.cursor = c;
            }
        }
        ctx.unicast(fwd, next);
    }

    /// The link to `next_hop` failed while sending `packet`: purge, notify
    /// the source of data packets, and drop.
    pub fn on_link_failure(&mut self, ctx: &mut Ctx, packet: Packet, next_hop: NodeId) {
        self.purge_link(self.me, next_hop);
        if let Body::Data(d) = &packet.body {
            if let Some(route) = &d.source_route {
                if let Some(c) = route.path.iter().position(|n| *n == self.me) {
                    if c > 0 {
                        let back: Vec<NodeId> = route.path[..=c].iter().rev().copied().collect();
                        let next = back[1];
                        let err = DsrRerr {
                            broken: (self.me, next_hop),
                            back,
                            cursor: 0,
                        };
                        let p = ctx.packet(Body::DsrRerr(err));
                        ctx.unicast(p, next);
                    }
                }
            }
        }
        ctx.discard(packet, DropReason::LinkBroken);
    }

    pub fn on_receive(&mut self, ctx: &mut Ctx, packet: Packet) {
        match &packet.body {
            Body::DsrRreq(_) => self.process_rreq(ctx, &packet),
            Body::DsrRrep(_) => self.process_rrep(ctx, packet),
            Body::DsrRerr(_) => self.process_rerr(ctx, packet),
            Body::Data(_) => self.dsr_forward(ctx, packet),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::DataMsg;
    use crate::proto::{Output, TestBed};

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    fn path(ids: &[u32]) -> Vec<NodeId> {
        ids.iter().map(|&i| n(i)).collect()
    }

    fn data(origin: u32, dest: u32, route: Option<&[u32]>) -> Packet {
        Packet::new(
            100,
            n(origin),
            Body::Data(DataMsg {
                flow: 0,
                seq: 0,
                send_time: 0.0,
                destination: n(dest),
                payload: 512,
                source_route: route.map(|r| SourceRoute {
                    path: path(r),
                    cursor: 0,
                }),
            }),
        )
    }

    #[test]
    fn cached_path_skips_flood() {
        let mut bed = TestBed::new();
        let mut s = DsrState::new(n(0), DsrConfig::default());
        s.cache_path(0.0, path(&[0, 1, 2]));
        let mut ctx = bed.ctx(0);
        s.route_data(&mut ctx, data(0, 2, None));
        assert!(
            matches!(&ctx.out[..], [Output::Unicast { next_hop, packet }]
            if *next_hop == n(1) && packet.source_route_bytes() == 12)
        );
    }

    #[test]
    fn chain_reply_carries_full_route() {
        let mut bed = TestBed::new();
        let mut dst = DsrState::new(n(2), DsrConfig::default());
        let rreq = Packet::new(
            1,
            n(0),
            Body::DsrRreq(DsrRreq {
                origin: n(0),
                destination: n(2),
                rreq_id: 1,
                record: path(&[0, 1]),
            }),
        );
        let mut ctx = bed.ctx(2);
        dst.process_rreq(&mut ctx, &rreq);
        let Output::Unicast { packet, next_hop } = &ctx.out[0] else {
            panic!("expected reply")
        };
        assert_eq!(*next_hop, n(1));
        assert!(matches!(&packet.body, Body::DsrRrep(r) if r.route == path(&[0, 1, 2])));
        assert_eq!(dst.cached_route(0.0, n(0)), Some(&path(&[2, 1, 0])[..]));
    }

    #[test]
    fn loop_guard_and_duplicates() {
        let mut bed = TestBed::new();
        let mut s = DsrState::new(n(1), DsrConfig::default());
        let mut ctx = bed.ctx(1);
        let looped = Packet::new(
            1,
            n(0),
            Body::DsrRreq(DsrRreq {
                origin: n(0),
                destination: n(5),
                rreq_id: 1,
                record: path(&[0, 1, 3]),
            }),
        );
        s.process_rreq(&mut ctx, &looped);
        assert!(ctx.out.is_empty());
        let fresh = Packet::new(
            2,
            n(0),
            Body::DsrRreq(DsrRreq {
                origin: n(0),
                destination: n(5),
                rreq_id: 2,
                record: path(&[0]),
            }),
        );
        s.process_rreq(&mut ctx, &fresh);
        s.process_rreq(&mut ctx, &fresh);
        assert_eq!(ctx.out.len(), 1);
        assert!(matches!(&ctx.out[0], Output::Broadcast { packet, .. }
            if matches!(&packet.body, Body::DsrRreq(r) if r.record == path(&[0, 1]))));
    }

    #[test]
    fn reply_at_source_flushes_buffer() {
        let mut bed = TestBed::new();
        let mut s = DsrState::new(n(0), DsrConfig::default());
        let mut ctx = bed.ctx(0);
        s.route_data(&mut ctx, data(0, 2, None));
        assert!(s.is_discovering(n(2)));
        ctx.out.clear();
        let rrep = Packet::new(
            5,
            n(2),
            Body::DsrRrep(DsrRrep {
                route: path(&[0, 1, 2]),
                cursor: 1,
            }),
        );
        s.process_rrep(&mut ctx, rrep);
        assert!(!s.is_discovering(n(2)));
        assert!(matches!(&ctx.out[..], [Output::Unicast { next_hop, .. }] if *next_hop == n(1)));
    }

    #[test]
    fn forward_advances_and_delivers() {
        let mut bed = TestBed::new();
        let mut mid = DsrState::new(n(1), DsrConfig::default());
        let mut ctx = bed.ctx(1);
        mid.dsr_forward(&mut ctx, data(0, 2, Some(&[0, 1, 2])));
        assert!(matches!(&ctx.out[0], Output::Unicast { next_hop, .. } if *next_hop == n(2)));
        let mut end = DsrState::new(n(2), DsrConfig::default());
        let mut ctx = bed.ctx(2);
        end.dsr_forward(&mut ctx, data(0, 2, Some(&[0, 1, 2])));
        assert!(matches!(&ctx.out[0], Output::Deliver(_)));
    }

    #[test]
    fn broken_link_purges_and_reports_back() {
        let mut bed = TestBed::new();
        let mut mid = DsrState::new(n(2), DsrConfig::default());
        mid.cache_path(0.0, path(&[2, 3, 4]));
        mid.cache_path(0.0, path(&[2, 1, 0]));
        let mut ctx = bed.ctx(2);
        mid.on_link_failure(&mut ctx, data(0, 4, Some(&[0, 1, 2, 3, 4])), n(3));
        assert_eq!(mid.cached_paths(n(4)), 0);
        assert_eq!(mid.cached_paths(n(0)), 1);
        let Output::Unicast { packet, next_hop } = &ctx.out[0] else {
            panic!("expected RERR")
        };
        assert_eq!(*next_hop, n(1));
        assert!(
            matches!(&packet.body, Body::DsrRerr(e) if e.back == path(&[2, 1, 0]) && e.broken == (n(2), n(3)))
        );
        assert!(matches!(
            &ctx.out[1],
            Output::DropData {
                reason: DropReason::LinkBroken,
                ..
            }
        ));

        let rerr = match &ctx.out[0] {
            Output::Unicast { packet, .. } => packet.clone(),
            _ => unreachable!(),
        };
        let mut src = DsrState::new(n(0), DsrConfig::default());
        src.cache_path(0.0, path(&[0, 1, 2, 3, 4]));
        let mut relay = DsrState::new(n(1), DsrConfig::default());
        let mut ctx = bed.ctx(1);
        relay.process_rerr(&mut ctx, rerr);
        let Output::Unicast { packet, next_hop } = ctx.out.remove(0) else {
            panic!("relay RERR")
        };
        assert_eq!(next_hop, n(0));
        let mut ctx = bed.ctx(0);
        src.process_rerr(&mut ctx, packet);
        assert!(ctx.out.is_empty());
        assert_eq!(src.cached_paths(n(4)), 0);
    }

    #[test]
    fn cache_keeps_three_shortest() {
        let mut s = DsrState::new(n(0), DsrConfig::default());
        s.cache_path(0.0, path(&[0, 1, 2, 3, 9]));
        s.cache_path(0.0, path(&[0, 4, 9]));
        s.cache_path(0.0, path(&[0, 5, 6, 9]));
        s.cache_path(0.0, path(&[0, 7, 9]));
        assert_eq!(s.cached_paths(n(9)), 3);
        assert_eq!(s.cached_route(0.0, n(9)).map(<[NodeId]>::len), Some(3));
        assert!(s.cached_route(30.0, n(9)).is_none());
        s.cache_path(0.0, path(&[0, 1, 0]));
        assert_eq!(s.cached_paths(n(0)), 0, "non-simple paths are refused");
    }

    #[test]
    fn retries_back_off_until_buffer_times_out() {
        let mut bed = TestBed::new();
        let mut s = DsrState::new(n(0), DsrConfig::default());
        {
            let mut ctx = bed.ctx(0);
            s.route_data(&mut ctx, data(0, 7, None));
        }
        bed.at(0.5);
        let mut ctx = bed.ctx(0);
        s.on_discovery_timer(&mut ctx, n(7), 0);
        assert!(s.is_discovering(n(7)));
        drop(ctx);
        bed.at(31.0);
        let mut ctx = bed.ctx(0);
        s.on_discovery_timer(&mut ctx, n(7), 1);
        assert!(!s.is_discovering(n(7)));
        assert!(ctx.out.iter().any(|o| matches!(
            o,
            Output::DropData {
                reason: DropReason::BufferTimeout,
                ..
            }
        )));
    }
}
