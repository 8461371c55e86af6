//! Frames exchanged between nodes and their accounting sizes.

use std::fmt;

use crate::NodeId;

/// A CML stable phase; also the target carried by a Change Phase packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StablePhase {
    Proactive,
    Reactive,
}

impl StablePhase {
    pub fn other(self) -> Self {
        match self {
            StablePhase::Proactive => StablePhase::Reactive,
            StablePhase::Reactive => StablePhase::Proactive,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StablePhase::Proactive => "p-phase",
            StablePhase::Reactive => "r-phase",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelloMsg {
    pub neighbors: Vec<NodeId>,
    /// Subset of `neighbors` chosen as this origin's MPRs.
    pub mprs: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcMsg {
    pub advertised: Vec<NodeId>,
    pub seq: u32,
    pub ttl: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RreqMsg {
    pub origin: NodeId,
    pub destination: NodeId,
    pub rreq_id: u32,
    pub origin_seq: u32,
    pub dest_seq: u32,
    pub hop_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrepMsg {
    /// The node that asked for the route (RREQ originator).
    pub origin: NodeId,
    /// The node the advertised route leads to.
    pub destination: NodeId,
    pub dest_seq: u32,
    pub hop_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsrRreq {
    pub origin: NodeId,
    pub destination: NodeId,
    pub rreq_id: u32,
    pub record: Vec<NodeId>,
}

/// Source-routed along `route` reversed; `cursor` indexes the current holder.
#[derive(Debug, Clone, PartialEq)]
pub struct DsrRrep {
    pub route: Vec<NodeId>,
    pub cursor: usize,
}

/// Travels back along `back` (detecting node first, source last).
#[derive(Debug, Clone, PartialEq)]
pub struct DsrRerr {
    pub broken: (NodeId, NodeId),
    pub back: Vec<NodeId>,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpPacket {
    pub origin: NodeId,
    pub target: StablePhase,
    pub seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProbeRef {
    pub origin: NodeId,
    pub probe_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HcReqPacket {
    pub origin: NodeId,
    pub probe_id: u32,
    pub ttl: u32,
    /// Hops travelled so far; lets relays learn a reverse route to the origin.
    pub travelled: u32,
    pub echo_parent: Option<ProbeRef>,
}

impl HcReqPacket {
    pub fn is_echo(&self) -> bool {
        self.echo_parent.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HcRepPacket {
    pub responder: NodeId,
    /// The probe origin this reply is addressed to.
    pub to: NodeId,
    pub probe_id: u32,
    pub is_echo_reply: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceRoute {
    pub path: Vec<NodeId>,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataMsg {
    pub flow: u32,
    pub seq: u32,
    pub send_time: f64,
    pub destination: NodeId,
    pub payload: u32,
    pub source_route: Option<SourceRoute>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Hello(HelloMsg),
    Tc(TcMsg),
    Rreq(RreqMsg),
    Rrep(RrepMsg),
    DsrRreq(DsrRreq),
    DsrRrep(DsrRrep),
    DsrRerr(DsrRerr),
    Cp(CpPacket),
    HcReq(HcReqPacket),
    HcRep(HcRepPacket),
    Data(DataMsg),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PacketKind {
    Hello,
    Tc,
    Rreq,
    Rrep,
    DsrRreq,
    DsrRrep,
    DsrRerr,
    Cp,
    HcReq,
    HcRep,
    Data,
}

impl PacketKind {
    pub const CONTROL: [PacketKind; 10] = [
        PacketKind::Hello,
        PacketKind::Tc,
        PacketKind::Rreq,
        PacketKind::Rrep,
        PacketKind::DsrRreq,
        PacketKind::DsrRrep,
        PacketKind::DsrRerr,
        PacketKind::Cp,
        PacketKind::HcReq,
        PacketKind::HcRep,
    ];

    pub fn is_control(self) -> bool {
        self != PacketKind::Data
    }

    pub fn is_cml_specific(self) -> bool {
        matches!(self, PacketKind::Cp | PacketKind::HcReq | PacketKind::HcRep)
    }

    pub fn name(self) -> &'static str {
        match self {
            PacketKind::Hello => "HELLO",
            PacketKind::Tc => "TC",
            PacketKind::Rreq => "RREQ",
            PacketKind::Rrep => "RREP",
            PacketKind::DsrRreq => "DSR-RREQ",
            PacketKind::DsrRrep => "DSR-RREP",
            PacketKind::DsrRerr => "DSR-RERR",
            PacketKind::Cp => "CP",
            PacketKind::HcReq => "HCREQ",
            PacketKind::HcRep => "HCREP",
            PacketKind::Data => "DATA",
        }
    }
}

impl fmt::Display for PacketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Wire-size constants used for routing-load accounting, in bytes.
pub mod sizes {
    pub const MSG_HEADER: u32 = 16;
    pub const ID: u32 = 4;
    pub const RREQ: u32 = 24;
    pub const RREP: u32 = 20;
    pub const DSR_RERR: u32 = 20;
    pub const CP: u32 = 16;
    pub const HCREQ: u32 = 20;
    pub const HCREP: u32 = 16;
    /// Source-route header cost per listed hop.
    pub const SOURCE_ROUTE_PER_HOP: u32 = 4;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub uid: u64,
    /// Node that created the packet (for relayed floods: the flood origin).
    pub origin: NodeId,
    pub body: Body,
    /// Integrity/authentication flag: cleared by in-flight tampering and
    /// never set on adversary-originated packets.
    pub authentic: bool,
    /// Security delay accumulated along the path so far (seconds).
    pub security_delay: f64,
    pub hops: u32,
}

impl Packet {
    pub fn new(uid: u64, origin: NodeId, body: Body) -> Self {
        Self {
            uid,
            origin,
            body,
            authentic: true,
            security_delay: 0.0,
            hops: 0,
        }
    }

    pub fn kind(&self) -> PacketKind {
        match &self.body {
            Body::Hello(_) => PacketKind::Hello,
            Body::Tc(_) => PacketKind::Tc,
            Body::Rreq(_) => PacketKind::Rreq,
            Body::Rrep(_) => PacketKind::Rrep,
            Body::DsrRreq(_) => PacketKind::DsrRreq,
            Body::DsrRrep(_) => PacketKind::DsrRrep,
            Body::DsrRerr(_) => PacketKind::DsrRerr,
            Body::Cp(_) => PacketKind::Cp,
            Body::HcReq(_) => PacketKind::HcReq,
            Body::HcRep(_) => PacketKind::HcRep,
            Body::Data(_) => PacketKind::Data,
        }
    }

    /// Network-layer size in bytes before any security overhead.
    pub fn size(&self) -> u32 {
        use sizes::*;
        match &self.body {
            Body::Hello(h) => MSG_HEADER + ID * h.neighbors.len() as u32,
            Body::Tc(t) => MSG_HEADER + ID * t.advertised.len() as u32,
            Body::Rreq(_) => RREQ,
            Body::Rrep(_) => RREP,
            Body::DsrRreq(r) => MSG_HEADER + ID * r.record.len() as u32,
            Body::DsrRrep(r) => MSG_HEADER + ID * r.route.len() as u32,
            Body::DsrRerr(e) => DSR_RERR + ID * e.back.len() as u32,
            Body::Cp(_) => CP,
            Body::HcReq(_) => HCREQ,
            Body::HcRep(_) => HCREP,
            Body::Data(d) => d.payload + self.source_route_bytes_of(d),
        }
    }

    fn source_route_bytes_of(&self, d: &DataMsg) -> u32 {
        d.source_route
            .as_ref()
            .map_or(0, |r| sizes::SOURCE_ROUTE_PER_HOP * r.path.len() as u32)
    }

    /// Bytes of source-route header carried by a data packet (DSR only).
    pub fn source_route_bytes(&self) -> u32 {
        match &self.body {
            Body::Data(d) => self.source_route_bytes_of(d),
            _ => 0,
        }
    }

    pub fn describe(&self) -> String {
        match &self.body {
            Body::Hello(h) => format!("HELLO o={} n={}", self.origin, h.neighbors.len()),
            Body::Tc(t) => format!(
                "TC o={} seq={} adv={}",
                self.origin,
                t.seq,
                t.advertised.len()
            ),
            Body::Rreq(r) => format!(
                "RREQ {}->{} id={} hc={}",
                r.origin, r.destination, r.rreq_id, r.hop_count
            ),
            Body::Rrep(r) => format!("RREP {}<-{} hc={}", r.origin, r.destination, r.hop_count),
            Body::DsrRreq(r) => format!(
                "DSR-RREQ {}->{} id={} rec={}",
                r.origin,
                r.destination,
                r.rreq_id,
                r.record.len()
            ),
            Body::DsrRrep(r) => format!("DSR-RREP len={} cur={}", r.route.len(), r.cursor),
            Body::DsrRerr(e) => format!("DSR-RERR {}-{}", e.broken.0, e.broken.1),
            Body::Cp(c) => format!("CP o={} seq={} to={}", c.origin, c.seq, c.target.label()),
            Body::HcReq(h) => format!(
                "HCREQ o={} id={} ttl={} echo={}",
                h.origin,
                h.probe_id,
                h.ttl,
                h.is_echo()
            ),
            Body::HcRep(h) => format!(
                "HCREP r={} to={} id={} echo={}",
                h.responder, h.to, h.probe_id, h.is_echo_reply
            ),
            Body::Data(d) => format!("DATA f={} s={} dst={}", d.flow, d.seq, d.destination),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    #[test]
    fn control_sizes() {
        let hello = Packet::new(
            0,
            n(0),
            Body::Hello(HelloMsg {
                neighbors: vec![n(1), n(2), n(3)],
                mprs: vec![n(1)],
            }),
        );
        assert_eq!(hello.size(), 28);
        let tc = Packet::new(
            0,
            n(0),
            Body::Tc(TcMsg {
                advertised: vec![n(4)],
                seq: 1,
                ttl: 255,
            }),
        );
        assert_eq!(tc.size(), 20);
        let cp = Packet::new(
            0,
            n(0),
            Body::Cp(CpPacket {
                origin: n(0),
                target: StablePhase::Reactive,
                seq: 0,
            }),
        );
        assert_eq!(cp.size(), 16);
        assert!(PacketKind::Cp.is_cml_specific() && PacketKind::Cp.is_control());
        assert!(!PacketKind::Data.is_control());
    }

    #[test]
    fn source_route_header_is_charged_per_hop() {
        let d = Packet::new(
            0,
            n(0),
            Body::Data(DataMsg {
                flow: 0,
                seq: 0,
                send_time: 0.0,
                destination: n(3),
                payload: 512,
                source_route: Some(SourceRoute {
                    path: vec![n(0), n(1), n(2), n(3)],
                    cursor: 0,
                }),
            }),
        );
        assert_eq!(d.source_route_bytes(), 16);
        assert_eq!(d.size(), 528);
    }
}
