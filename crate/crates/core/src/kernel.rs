//! Discrete-event kernel: simulated clock, cancellable event queue and
//! seeded random streams.
//!
//! Events are totally ordered by `(fire_time, sequence)`. The sequence is a
//! per-scheduler insertion counter, so events scheduled for the same instant
//! are dispatched first-in first-out.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("cannot schedule an event at t={at} in the past (now={now})")]
    InThePast { at: f64, now: f64 },
    #[error("event time must be finite, got {0}")]
    NonFinite(f64),
}

/// Opaque handle returned by [`Scheduler::schedule`]; permits cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn sequence(self) -> u64 {
        self.0
    }
}

struct Entry<E> {
    time: f64,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Counters that satisfy `dispatched + cancelled + pending == scheduled`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub scheduled: u64,
    pub dispatched: u64,
    pub cancelled: u64,
    pub pending: u64,
}

pub struct Scheduler<E> {
    now: f64,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    live: HashSet<u64>,
    dispatched: u64,
    cancelled: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_seq: 0,
            heap: BinaryHeap::new(),
            live: HashSet::new(),
            dispatched: 0,
            cancelled: 0,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn schedule(&mut self, at: f64, payload: E) -> Result<EventHandle, KernelError> {
        if !at.is_finite() {
            return Err(KernelError::NonFinite(at));
        }
        if at < self.now {
            return Err(KernelError::InThePast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            time: at,
            seq,
            payload,
        });
        self.live.insert(seq);
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` seconds from now. Negative delays are a bug.
    pub fn schedule_in(&mut self, delay: f64, payload: E) -> Result<EventHandle, KernelError> {
        self.schedule(self.now + delay, payload)
    }

    /// Returns true if the event was still pending; it will never fire.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if self.live.remove(&handle.0) {
            self.cancelled += 1;
            true
        } else {
            false
        }
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.live.contains(&handle.0)
    }

    /// Pops the next live event with `fire_time <= t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: f64) -> Option<(f64, EventHandle, E)> {
        loop {
            let head = self.heap.peek()?;
            if head.time > t_end {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            if !self.live.remove(&entry.seq) {
                continue;
            }
            self.now = entry.time;
            self.dispatched += 1;
            return Some((entry.time, EventHandle(entry.seq), entry.payload));
        }
    }

    /// Dispatches every event with `fire_time <= t_end` in order, then sets
    /// the clock to `t_end`. Returns the number of dispatched events.
    pub fn run_until<F>(&mut self, t_end: f64, mut handler: F) -> usize
    where
        F: FnMut(&mut Self, f64, E),
    {
        let mut count = 0;
        while let Some((time, _, payload)) = self.pop_until(t_end) {
            handler(self, time, payload);
            count += 1;
        }
        if t_end > self.now {
            self.now = t_end;
        }
        count
    }

    /// Moves the clock forward without dispatching. Used at the end of a run.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }

    pub fn stats(&self) -> QueueStats {
        QueueStats {
            scheduled: self.next_seq,
            dispatched: self.dispatched,
            cancelled: self.cancelled,
            pending: self.live.len() as u64,
        }
    }
}

/// Seeded pseudo-random stream. Identical seeds give identical draws on every
/// platform (ChaCha8 is specified bit-exactly).
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent substream. The result depends only on this
    /// stream's seed, `purpose` and `id`, never on draws already taken.
    pub fn fork(&self, purpose: u64, id: u64) -> RandomStream {
        let mixed = splitmix64(
            self.seed ^ splitmix64(purpose.wrapping_mul(0x100_0000_01B3) ^ splitmix64(id)),
        );
        RandomStream::new(mixed)
    }

    /// Uniform draw in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.rng.gen::<f64>()
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// One dispatched event in a debug trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLine {
    pub time: f64,
    pub node: Option<usize>,
    pub kind: &'static str,
    pub detail: String,
}

impl TraceLine {
    /// `time<TAB>node<TAB>kind<TAB>detail`; global events use `-` as node.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let node = self.node.map_or_else(|| "-".to_string(), |n| n.to_string());
        let _ = write!(
            s,
            "{:.9}\t{}\t{}\t{}",
            self.time, node, self.kind, self.detail
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_fires_at_time() {
        let mut s = Scheduler::new();
        s.schedule(5.0, "timer").unwrap();
        let (t, _, p) = s.pop_until(10.0).unwrap();
        assert_eq!((t, p), (5.0, "timer"));
        assert_eq!(s.now(), 5.0);
    }

    #[test]
    fn equal_times_are_fifo() {
        let mut s = Scheduler::new();
        s.schedule(3.0, 'A').unwrap();
        s.schedule(3.0, 'B').unwrap();
        let mut order = Vec::new();
        s.run_until(10.0, |_, _, e| order.push(e));
        assert_eq!(order, vec!['A', 'B']);
    }

    #[test]
    fn past_events_rejected() {
        let mut s = Scheduler::new();
        s.run_until(2.0, |_, _, _: ()| {});
        assert_eq!(
            s.schedule(1.0, ()),
            Err(KernelError::InThePast { at: 1.0, now: 2.0 })
        );
        assert!(matches!(
            s.schedule(f64::NAN, ()),
            Err(KernelError::NonFinite(_))
        ));
    }

    #[test]
    fn cancel_semantics() {
        let mut s = Scheduler::new();
        let a = s.schedule(1.0, 1).unwrap();
        let b = s.schedule(2.0, 2).unwrap();
        assert!(s.cancel(a));
        assert!(!s.cancel(a), "second cancel is a no-op");
        let mut seen = Vec::new();
        s.run_until(5.0, |_, _, e| seen.push(e));
        assert_eq!(seen, vec![2]);
        assert!(!s.cancel(b), "already dispatched");
    }

    #[test]
    fn run_until_empty_queue_moves_clock() {
        let mut s: Scheduler<()> = Scheduler::new();
        assert_eq!(s.run_until(10.0, |_, _, _| {}), 0);
        assert_eq!(s.now(), 10.0);
    }

    #[test]
    fn run_until_stops_at_horizon() {
        let mut s = Scheduler::new();
        for t in [1.0, 2.0, 3.0] {
            s.schedule(t, t).unwrap();
        }
        assert_eq!(s.run_until(2.5, |_, _, _| {}), 2);
        assert_eq!(s.now(), 2.5);
        assert_eq!(s.stats().pending, 1);
    }

    #[test]
    fn handlers_may_schedule_more_events() {
        let mut s = Scheduler::new();
        s.schedule(0.0, 0u32).unwrap();
        let mut fired = Vec::new();
        s.run_until(10.0, |s, t, n| {
            fired.push((t, n));
            if n < 3 {
                s.schedule_in(1.0, n + 1).unwrap();
            }
        });
        assert_eq!(fired, vec![(0.0, 0), (1.0, 1), (2.0, 2), (3.0, 3)]);
    }

    #[test]
    fn forked_streams_are_stable() {
        let root = RandomStream::new(42);
        let mut a1 = root.fork(1, 7);
        let mut a2 = RandomStream::new(42).fork(1, 7);
        let mut b = root.fork(1, 8);
        let xa: Vec<u64> = (0..4).map(|_| a1.next_u64()).collect();
        let xa2: Vec<u64> = (0..4).map(|_| a2.next_u64()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xa2);
        assert_ne!(xa, xb);
    }

    #[test]
    fn trace_line_format() {
        let l = TraceLine {
            time: 1.5,
            node: Some(3),
            kind: "rx",
            detail: "HELLO from 2".into(),
        };
        assert_eq!(l.render(), "1.500000000\t3\trx\tHELLO from 2");
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dispatch_order_is_total(times in proptest::collection::vec(0u32..50, 1..60),
                                       cancel_mask in proptest::collection::vec(any::<bool>(), 60)) {
                let mut s = Scheduler::new();
                let mut handles = Vec::new();
                for (i, t) in times.iter().enumerate() {
                    handles.push(s.schedule(*t as f64 * 0.5, i).unwrap());
                }
                for (h, c) in handles.iter().zip(&cancel_mask) {
                    if *c { s.cancel(*h); }
                }
                let st = s.stats();
                prop_assert_eq!(st.dispatched + st.cancelled + st.pending, st.scheduled);
                let mut trace = Vec::new();
                s.run_until(100.0, |_, t, i| trace.push((t, i)));
                for w in trace.windows(2) {
                    prop_assert!(w[0].0 < w[1].0 || (w[0].0 == w[1].0 && w[0].1 < w[1].1));
                }
                let st = s.stats();
                prop_assert_eq!(st.dispatched + st.cancelled + st.pending, st.scheduled);
                prop_assert_eq!(st.pending, 0);
            }
        }
    }
}
