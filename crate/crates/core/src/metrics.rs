//! Per-run measurement and the cross-size cumulative series.
//!
//! Jitter is the mean absolute difference between the delays of
//! consecutively delivered sequence numbers of a flow. Only delivered
//! packets contribute to delay and jitter; losses are counted separately.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::packet::PacketKind;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("flow {flow} seq {seq} delivered twice")]
    Duplicate { flow: u32, seq: u32 },
    #[error("receive time {recv} precedes send time {send}")]
    TimeTravel { send: f64, recv: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryRecord {
    pub flow: u32,
    pub seq: u32,
    pub send_time: f64,
    pub recv_time: f64,
    pub hops: u32,
    /// Part of the delay caused by security processing and the extra
    /// airtime of security headers.
    pub security_delay: f64,
}

impl DeliveryRecord {
    pub fn delay(&self) -> f64 {
        self.recv_time - self.send_time
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ControlCounter {
    pub packets: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    NoRoute,
    DiscoveryFailed,
    LinkBroken,
    QueueOverflow,
    BufferTimeout,
    BadSourceRoute,
    MissingReverseRoute,
    UnknownEchoParent,
    NodeAbsent,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SecurityCounters {
    pub rejected: u64,
    pub adversary_injected: u64,
    pub tampered: u64,
    pub crypto_delay_total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricLog {
    warmup: f64,
    deliveries: BTreeMap<(u32, u32), DeliveryRecord>,
    pub duplicates: u64,
    sent: BTreeMap<u32, u64>,
    data_drops: BTreeMap<DropReason, u64>,
    control_drops: BTreeMap<DropReason, u64>,
    control: BTreeMap<PacketKind, ControlCounter>,
    /// DSR source-route header bytes carried by data transmissions.
    pub source_route_bytes: u64,
    pub data_transmissions: u64,
    pub data_bytes: u64,
    pub security: SecurityCounters,
    pub phase_shifts: u64,
}

impl MetricLog {
    /// Records with `send_time < warmup` and transmissions before `warmup`
    /// are excluded.
    pub fn new(warmup: f64) -> Self {
        Self {
            warmup,
            ..Self::default()
        }
    }

    pub fn warmup(&self) -> f64 {
        self.warmup
    }

    pub fn in_window(&self, t: f64) -> bool {
        t >= self.warmup
    }

    /// Returns `Ok(false)` when the record falls inside the warmup.
    pub fn record_delivery(&mut self, rec: DeliveryRecord) -> Result<bool, MetricsError> {
        if rec.recv_time < rec.send_time {
            return Err(MetricsError::TimeTravel {
                send: rec.send_time,
                recv: rec.recv_time,
            });
        }
        if !self.in_window(rec.send_time) {
            return Ok(false);
        }
        let key = (rec.flow, rec.seq);
        if self.deliveries.contains_key(&key) {
            self.duplicates += 1;
            return Err(MetricsError::Duplicate {
                flow: rec.flow,
                seq: rec.seq,
            });
        }
        self.deliveries.insert(key, rec);
        Ok(true)
    }

    pub fn record_sent(&mut self, flow: u32, send_time: f64) {
        if self.in_window(send_time) {
            *self.sent.entry(flow).or_default() += 1;
        }
    }

    pub fn record_data_drop(&mut self, send_time: f64, reason: DropReason) {
        if self.in_window(send_time) {
            *self.data_drops.entry(reason).or_default() += 1;
        }
    }

    pub fn record_control_drop(&mut self, now: f64, reason: DropReason) {
        if self.in_window(now) {
            *self.control_drops.entry(reason).or_default() += 1;
        }
    }

    /// One on-air transmission of a control packet, security bytes included.
    pub fn record_control_tx(&mut self, now: f64, kind: PacketKind, bytes: u32) {
        if self.in_window(now) {
            let c = self.control.entry(kind).or_default();
            c.packets += 1;
            c.bytes += u64::from(bytes);
        }
    }

    pub fn record_data_tx(&mut self, now: f64, bytes: u32, source_route_bytes: u32) {
        if self.in_window(now) {
            self.data_transmissions += 1;
            self.data_bytes += u64::from(bytes);
            self.source_route_bytes += u64::from(source_route_bytes);
        }
    }

    pub fn deliveries(&self) -> impl Iterator<Item = &DeliveryRecord> {
        self.deliveries.values()
    }

    pub fn delivery(&self, flow: u32, seq: u32) -> Option<&DeliveryRecord> {
        self.deliveries.get(&(flow, seq))
    }

    pub fn control(&self, kind: PacketKind) -> ControlCounter {
        self.control.get(&kind).copied().unwrap_or_default()
    }

    pub fn data_drops(&self, reason: DropReason) -> u64 {
        self.data_drops.get(&reason).copied().unwrap_or(0)
    }

    pub fn control_drops(&self, reason: DropReason) -> u64 {
        self.control_drops.get(&reason).copied().unwrap_or(0)
    }

    pub fn total_data_drops(&self) -> u64 {
        self.data_drops.values().sum()
    }

    pub fn sent(&self, flow: u32) -> u64 {
        self.sent.get(&flow).copied().unwrap_or(0)
    }

    pub fn total_sent(&self) -> u64 {
        self.sent.values().sum()
    }

    pub fn delivered_count(&self) -> u64 {
        self.deliveries.len() as u64
    }

    pub fn delivered_on(&self, flow: u32) -> u64 {
        self.deliveries.range((flow, 0)..=(flow, u32::MAX)).count() as u64
    }

    /// Control packets transmitted (all kinds, relays included).
    pub fn control_packets(&self) -> u64 {
        self.control.values().map(|c| c.packets).sum()
    }

    /// Control bytes plus DSR source-route header bytes.
    pub fn control_bytes(&self) -> u64 {
        self.control.values().map(|c| c.bytes).sum::<u64>() + self.source_route_bytes
    }

    pub fn cml_specific_packets(&self) -> u64 {
        self.control
            .iter()
            .filter(|(k, _)| k.is_cml_specific())
            .map(|(_, c)| c.packets)
            .sum()
    }

    pub fn avg_delay(&self) -> Option<f64> {
        if self.deliveries.is_empty() {
            return None;
        }
        let total: f64 = self.deliveries.values().map(DeliveryRecord::delay).sum();
        Some(total / self.deliveries.len() as f64)
    }

    /// Mean |Δdelay| over consecutive delivered sequence numbers of `flow`.
    pub fn flow_jitter(&self, flow: u32) -> Option<f64> {
        let delays: Vec<f64> = self
            .deliveries
            .range((flow, 0)..=(flow, u32::MAX))
            .map(|(_, r)| r.delay())
            .collect();
        if delays.len() < 2 {
            return None;
        }
        let sum: f64 = delays.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        Some(sum / (delays.len() - 1) as f64)
    }

    pub fn flows(&self) -> Vec<u32> {
        let mut flows: Vec<u32> = self.sent.keys().copied().collect();
        flows.extend(self.deliveries.keys().map(|k| k.0));
        flows.sort_unstable();
        flows.dedup();
        flows
    }

    /// Mean of per-flow jitter over flows where it is defined.
    pub fn avg_jitter(&self) -> Option<f64> {
        let per_flow: Vec<f64> = self
            .flows()
            .into_iter()
            .filter_map(|f| self.flow_jitter(f))
            .collect();
        if per_flow.is_empty() {
            None
        } else {
            Some(per_flow.iter().sum::<f64>() / per_flow.len() as f64)
        }
    }

    pub fn summarize(&self, meta: RunMeta) -> RunSummary {
        let ctl_packets = self.control_packets();
        let delivered = self.delivered_count();
        RunSummary {
            meta,
            avg_delay: self.avg_delay(),
            avg_jitter: self.avg_jitter(),
            ctl_packets,
            ctl_bytes: self.control_bytes(),
            data_sent: self.total_sent(),
            data_delivered: delivered,
            goodput_ratio: goodput(delivered, ctl_packets),
            phase_shifts: self.phase_shifts,
        }
    }
}

fn goodput(delivered: u64, ctl_packets: u64) -> Option<f64> {
    (ctl_packets > 0).then(|| delivered as f64 / ctl_packets as f64)
}

/// Identifies the run a summary belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub protocol: String,
    pub security_mode: String,
    pub nodes: usize,
    /// `None` for rows averaged over seeds.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub meta: RunMeta,
    pub avg_delay: Option<f64>,
    pub avg_jitter: Option<f64>,
    pub ctl_packets: u64,
    pub ctl_bytes: u64,
    pub data_sent: u64,
    pub data_delivered: u64,
    /// Delivered data packets per transmitted control packet.
    pub goodput_ratio: Option<f64>,
    pub phase_shifts: u64,
}

pub const SUMMARY_HEADER: &str = "protocol,security_mode,N,seed,avg_delay_s,avg_jitter_s,ctl_packets,ctl_bytes,data_sent,data_delivered,goodput_ratio,phase_shifts";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.9}"))
}

impl RunSummary {
    pub fn csv_row(&self) -> String {
        let seed = self
            .meta
            .seed
            .map_or_else(|| "mean".to_string(), |s| s.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.meta.protocol,
            self.meta.security_mode,
            self.meta.nodes,
            seed,
            opt(self.avg_delay),
            opt(self.avg_jitter),
            self.ctl_packets,
            self.ctl_bytes,
            self.data_sent,
            self.data_delivered,
            opt(self.goodput_ratio),
            self.phase_shifts
        )
    }

    /// Mean over seeds of the same (protocol, mode, N) cell. Undefined
    /// per-seed values are skipped; counters are rounded means.
    pub fn mean_of(rows: &[RunSummary]) -> Option<RunSummary> {
        let first = rows.first()?;
        let mean_opt = |f: &dyn Fn(&RunSummary) -> Option<f64>| {
            let vals: Vec<f64> = rows.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let mean_u = |f: &dyn Fn(&RunSummary) -> u64| {
            (rows.iter().map(|r| f(r) as f64).sum::<f64>() / rows.len() as f64).round() as u64
        };
        Some(RunSummary {
            meta: RunMeta {
                seed: None,
                ..first.meta.clone()
            },
            avg_delay: mean_opt(&|r| r.avg_delay),
            avg_jitter: mean_opt(&|r| r.avg_jitter),
            ctl_packets: mean_u(&|r| r.ctl_packets),
            ctl_bytes: mean_u(&|r| r.ctl_bytes),
            data_sent: mean_u(&|r| r.data_sent),
            data_delivered: mean_u(&|r| r.data_delivered),
            goodput_ratio: mean_opt(&|r| r.goodput_ratio),
            phase_shifts: mean_u(&|r| r.phase_shifts),
        })
    }
}

pub fn summary_csv(rows: &[RunSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Running prefix sums over network size for one (protocol, mode) series.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativePoint {
    pub nodes: usize,
    pub delay: f64,
    pub jitter: f64,
    pub ctl_packets: f64,
    pub ctl_bytes: f64,
    pub goodput: f64,
}

/// `summaries` must be sorted by network size; undefined values add zero.
pub fn cumulate(summaries: &[RunSummary]) -> Vec<CumulativePoint> {
    let mut acc = CumulativePoint {
        nodes: 0,
        delay: 0.0,
        jitter: 0.0,
        ctl_packets: 0.0,
        ctl_bytes: 0.0,
        goodput: 0.0,
    };
    summaries
        .iter()
        .map(|s| {
            acc.nodes = s.meta.nodes;
            acc.delay += s.avg_delay.unwrap_or(0.0);
            acc.jitter += s.avg_jitter.unwrap_or(0.0);
            acc.ctl_packets += s.ctl_packets as f64;
            acc.ctl_bytes += s.ctl_bytes as f64;
            acc.goodput += s.goodput_ratio.unwrap_or(0.0);
            acc.clone()
        })
        .collect()
}

pub const CUMULATIVE_HEADER: &str =
    "protocol,security_mode,N,cum_delay_s,cum_jitter_s,cum_ctl_packets,cum_ctl_bytes,cum_goodput_ratio";

pub fn cumulative_csv(series: &[(String, String, Vec<CumulativePoint>)]) -> String {
    let mut out = String::from(CUMULATIVE_HEADER);
    out.push('\n');
    for (proto, mode, points) in series {
        for p in points {
            let _ = writeln!(
                out,
                "{proto},{mode},{},{:.9},{:.9},{},{},{:.9}",
                p.nodes, p.delay, p.jitter, p.ctl_packets, p.ctl_bytes, p.goodput
            );
        }
    }
    out
}
