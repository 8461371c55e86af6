//! The interface between routing engines and the simulated world.
//!
//! Handlers receive a [`Ctx`] holding the clock, the node's random stream
//! and the scheduler (for timers). Everything that leaves the node goes
//! through [`Output`], which the world applies after the handler returns.

use crate::kernel::{EventHandle, RandomStream, Scheduler};
use crate::metrics::DropReason;
use crate::packet::{Body, Packet, PacketKind};
use crate::sim::Event;
use crate::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub enum Timer {
    OlsrHello {
        gen: u32,
    },
    OlsrTc {
        gen: u32,
    },
    AodvDiscovery {
        gen: u32,
        dest: NodeId,
        attempt: u32,
    },
    DsrDiscovery {
        dest: NodeId,
        attempt: u32,
    },
    CmlGuard {
        episode: u32,
    },
    CmlProbeWindow {
        episode: u32,
        probe: u8,
    },
}

/// One line of the phase-transition log.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: &'static str,
    pub to: &'static str,
    pub trigger: String,
    /// True when the node committed to a new stable phase.
    pub shift: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Broadcast {
        packet: Packet,
        jitter: f64,
    },
    Unicast {
        packet: Packet,
        next_hop: NodeId,
    },
    Deliver(Packet),
    DropData {
        packet: Packet,
        reason: DropReason,
    },
    DropControl {
        kind: PacketKind,
        reason: DropReason,
    },
    Transition(Transition),
}

pub struct Ctx<'a> {
    pub now: f64,
    pub me: NodeId,
    pub rng: &'a mut RandomStream,
    sched: &'a mut Scheduler<Event>,
    uids: &'a mut u64,
    pub out: Vec<Output>,
}

impl<'a> Ctx<'a> {
    pub fn new(
        me: NodeId,
        rng: &'a mut RandomStream,
        sched: &'a mut Scheduler<Event>,
        uids: &'a mut u64,
    ) -> Self {
        Self {
            now: sched.now(),
            me,
            rng,
            sched,
            uids,
            out: Vec::new(),
        }
    }

    pub fn timer(&mut self, delay: f64, timer: Timer) -> EventHandle {
        self.sched
            .schedule(
                self.now + delay.max(0.0),
                Event::Timer {
                    node: self.me,
                    timer,
                },
            )
            .expect("timer delay is nonnegative")
    }

    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.sched.cancel(handle)
    }

    /// A fresh packet originated by this node.
    pub fn packet(&mut self, body: Body) -> Packet {
        *self.uids += 1;
        Packet::new(*self.uids, self.me, body)
    }

    pub fn broadcast(&mut self, packet: Packet, jitter: f64) {
        self.out.push(Output::Broadcast { packet, jitter });
    }

    pub fn unicast(&mut self, packet: Packet, next_hop: NodeId) {
        self.out.push(Output::Unicast { packet, next_hop });
    }

    pub fn deliver(&mut self, packet: Packet) {
        self.out.push(Output::Deliver(packet));
    }

    pub fn drop_data(&mut self, packet: Packet, reason: DropReason) {
        self.out.push(Output::DropData { packet, reason });
    }

    pub fn drop_control(&mut self, kind: PacketKind, reason: DropReason) {
        self.out.push(Output::DropControl { kind, reason });
    }

    /// Drops `packet`, classifying it as data or control.
    pub fn discard(&mut self, packet: Packet, reason: DropReason) {
        match packet.kind() {
            PacketKind::Data => self.drop_data(packet, reason),
            kind => self.drop_control(kind, reason),
        }
    }

    pub fn transition(
        &mut self,
        from: &'static str,
        to: &'static str,
        trigger: impl Into<String>,
        shift: bool,
    ) {
        self.out.push(Output::Transition(Transition {
            from,
            to,
            trigger: trigger.into(),
            shift,
        }));
    }

    /// Uniform relay jitter in `[0, max)`.
    pub fn jitter(&mut self, max: f64) -> f64 {
        self.rng.uniform(0.0, max)
    }
}

/// Test harness: a scheduler plus stream that can mint contexts.
#[cfg(test)]
pub(crate) struct TestBed {
    pub sched: Scheduler<Event>,
    pub rng: RandomStream,
    pub uids: u64,
}

#[cfg(test)]
impl TestBed {
    pub fn new() -> Self {
        Self {
            sched: Scheduler::new(),
            rng: RandomStream::new(1),
            uids: 0,
        }
    }

    pub fn at(&mut self, t: f64) -> &mut Self {
        self.sched.advance_to(t);
        self
    }

    pub fn ctx(&mut self, me: u32) -> Ctx<'_> {
        Ctx::new(NodeId(me), &mut self.rng, &mut self.sched, &mut self.uids)
    }
}
