//! Scenario configuration: a TOML document with named sections. Every key
//! has a default, unknown keys are rejected, and validation errors name
//! the offending key.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aodv::AodvConfig;
use crate::cml::CmlConfig;
use crate::dsr::DsrConfig;
use crate::mobility::{Area, MobilityParams, Point, Rect};
use crate::olsr::OlsrConfig;
use crate::security::{
    AdversaryBehavior, AdversaryRole, CipherProfile, DeviceProfile, SecurityMode,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Olsr,
    Aodv,
    Dsr,
    Cml,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::Olsr, Protocol::Aodv, Protocol::Dsr, Protocol::Cml];

    pub fn label(self) -> &'static str {
        match self {
            Protocol::Olsr => "olsr",
            Protocol::Aodv => "aodv",
            Protocol::Dsr => "dsr",
            Protocol::Cml => "cml",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.label() == s)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaConfig {
    pub width: f64,
    pub height: f64,
    pub obstacles: Vec<Rect>,
}

impl Default for AreaConfig {
    fn default() -> Self {
        Self {
            width: 1000.0,
            height: 1000.0,
            obstacles: Vec::new(),
        }
    }
}

impl AreaConfig {
    pub fn area(&self) -> Area {
        Area {
            width: self.width,
            height: self.height,
            obstacles: self.obstacles.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    pub v_min: f64,
    pub v_max: f64,
    pub pause_min: f64,
    pub pause_max: f64,
    /// Positions and links are refreshed every `tick` seconds.
    pub tick: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        let p = MobilityParams::default();
        Self {
            v_min: p.v_min,
            v_max: p.v_max,
            pause_min: p.pause_min,
            pause_max: p.pause_max,
            tick: 0.5,
        }
    }
}

impl MobilityConfig {
    pub fn stationary() -> Self {
        Self {
            v_min: 0.0,
            v_max: 0.0,
            pause_min: 0.0,
            pause_max: 0.0,
            ..Self::default()
        }
    }

    pub fn params(&self) -> MobilityParams {
        MobilityParams {
            v_min: self.v_min,
            v_max: self.v_max,
            pause_min: self.pause_min,
            pause_max: self.pause_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub radius: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { radius: 250.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementConfig {
    /// Fixed initial positions, one `[x, y]` per node. Random when empty.
    pub positions: Vec<[f64; 2]>,
}

impl PlacementConfig {
    pub fn points(&self) -> Vec<Point> {
        self.positions
            .iter()
            .map(|p| Point::new(p[0], p[1]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Number of CBR flows; defaults to `min(10, N - 1)`.
    pub flows: Option<u32>,
    /// Packets per second per flow.
    pub rate: f64,
    pub payload: u32,
    /// Flows begin at a random offset after this time.
    pub start: f64,
    /// Explicit `[source, destination]` pairs; random when empty.
    pub pairs: Vec<[u32; 2]>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            flows: None,
            rate: 4.0,
            payload: 512,
            start: 1.0,
            pairs: Vec::new(),
        }
    }
}

impl TrafficConfig {
    pub fn flow_count(&self, nodes: u32) -> u32 {
        if !self.pairs.is_empty() {
            return self.pairs.len() as u32;
        }
        self.flows
            .unwrap_or_else(|| nodes.saturating_sub(1).min(10))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    /// Per-node FIFO, carrier sense with random backoff, link-layer retries.
    Csma,
    /// Contention-free: every frame arrives after its airtime.
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub model: ChannelModel,
    /// Unicast rate in bit/s.
    pub data_rate: f64,
    /// Broadcast and ACK rate in bit/s.
    pub basic_rate: f64,
    /// Preamble and PLCP header, seconds.
    pub plcp: f64,
    pub mac_header: u32,
    pub ack_bytes: u32,
    pub difs: f64,
    pub sifs: f64,
    pub slot: f64,
    pub cw_min: u32,
    pub cw_max: u32,
    pub retry_limit: u32,
    pub queue_limit: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            model: ChannelModel::Csma,
            data_rate: 2e6,
            basic_rate: 1e6,
            plcp: 192e-6,
            mac_header: 34,
            ack_bytes: 14,
            difs: 50e-6,
            sifs: 10e-6,
            slot: 20e-6,
            cw_min: 31,
            cw_max: 1023,
            retry_limit: 7,
            queue_limit: 50,
        }
    }
}

impl ChannelConfig {
    pub fn ideal() -> Self {
        Self {
            model: ChannelModel::Ideal,
            ..Self::default()
        }
    }

    pub fn airtime(&self, bytes: u32, broadcast: bool) -> f64 {
        let rate = if broadcast {
            self.basic_rate
        } else {
            self.data_rate
        };
        self.plcp + f64::from(8 * (self.mac_header + bytes)) / rate
    }

    pub fn ack_time(&self) -> f64 {
        self.sifs + self.plcp + f64::from(8 * self.ack_bytes) / self.basic_rate
    }

    /// Extra airtime caused by `delta` more bytes.
    pub fn extra_airtime(&self, delta: u32, broadcast: bool) -> f64 {
        let rate = if broadcast {
            self.basic_rate
        } else {
            self.data_rate
        };
        f64::from(8 * delta) / rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CipherName {
    Aes128,
    Des,
    TripleDes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    /// Processor speed in instructions per second.
    pub cpu_ips: f64,
    pub cipher: CipherName,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            cpu_ips: 450e6,
            cipher: CipherName::Aes128,
        }
    }
}

impl DeviceConfig {
    pub fn profile(&self) -> DeviceProfile {
        let cipher = match self.cipher {
            CipherName::Aes128 => CipherProfile::AES_128,
            CipherName::Des => CipherProfile::DES,
            CipherName::TripleDes => CipherProfile::TRIPLE_DES,
        };
        DeviceProfile {
            cpu_ips: self.cpu_ips,
            cipher,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub protocol: Protocol,
    pub security: SecurityMode,
    /// Node count N.
    pub nodes: u32,
    /// Simulated seconds.
    pub duration: f64,
    /// Initial seconds excluded from every metric.
    pub warmup: f64,
    pub seed: u64,
    pub area: AreaConfig,
    pub mobility: MobilityConfig,
    pub link: LinkConfig,
    pub placement: PlacementConfig,
    pub traffic: TrafficConfig,
    pub channel: ChannelConfig,
    pub device: DeviceConfig,
    pub olsr: OlsrConfig,
    pub aodv: AodvConfig,
    pub dsr: DsrConfig,
    pub cml: CmlConfig,
    pub adversary: Vec<AdversaryRole>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Cml,
            security: SecurityMode::None,
            nodes: 10,
            duration: 300.0,
            warmup: 50.0,
            seed: 1,
            area: AreaConfig::default(),
            mobility: MobilityConfig::default(),
            link: LinkConfig::default(),
            placement: PlacementConfig::default(),
            traffic: TrafficConfig::default(),
            channel: ChannelConfig::default(),
            device: DeviceConfig::default(),
            olsr: OlsrConfig::default(),
            aodv: AodvConfig::default(),
            dsr: DsrConfig::default(),
            cml: CmlConfig::default(),
            adversary: Vec::new(),
        }
    }
}

fn positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be a positive number, got {v}")))
    }
}

fn nonnegative(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(
            key,
            format!("must be a nonnegative number, got {v}"),
        ))
    }
}

const SHIPPED: &str = include_str!("../../../config/default.toml");

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The scenario in `config/default.toml`, compiled in.
    pub fn shipped() -> Self {
        Self::from_toml_str(SHIPPED).expect("shipped configuration is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nodes < 2 {
            return Err(invalid(
                "nodes",
                format!("N must be at least 2, got {}", self.nodes),
            ));
        }
        positive("duration", self.duration)?;
        nonnegative("warmup", self.warmup)?;
        if self.warmup >= self.duration {
            return Err(invalid("warmup", "must be shorter than duration"));
        }
        positive("area.width", self.area.width)?;
        positive("area.height", self.area.height)?;
        let area = self.area.area();
        if !area.obstacles_within_bounds() {
            return Err(invalid(
                "area.obstacles",
                "every obstacle must have positive size and lie inside the area",
            ));
        }
        if area.free_fraction_estimate() <= 0.0 {
            return Err(invalid("area.obstacles", "obstacles leave no free space"));
        }
        let m = &self.mobility;
        nonnegative("mobility.v_min", m.v_min)?;
        nonnegative("mobility.v_max", m.v_max)?;
        if m.v_min > m.v_max {
            return Err(invalid("mobility.v_min", "must not exceed mobility.v_max"));
        }
        if m.v_max > 0.0 && m.v_min <= 0.0 {
            return Err(invalid(
                "mobility.v_min",
                "must be positive when nodes move",
            ));
        }
        nonnegative("mobility.pause_min", m.pause_min)?;
        nonnegative("mobility.pause_max", m.pause_max)?;
        if m.pause_min > m.pause_max {
            return Err(invalid(
                "mobility.pause_min",
                "must not exceed mobility.pause_max",
            ));
        }
        positive("mobility.tick", m.tick)?;
        positive("link.radius", self.link.radius)?;
        if !self.placement.positions.is_empty() {
            if self.placement.positions.len() != self.nodes as usize {
                return Err(invalid(
                    "placement.positions",
                    format!("expected {} positions", self.nodes),
                ));
            }
            if self.placement.points().iter().any(|p| !area.is_free(*p)) {
                return Err(invalid(
                    "placement.positions",
                    "every position must be inside the area and outside obstacles",
                ));
            }
        }
        positive("traffic.rate", self.traffic.rate)?;
        if self.traffic.payload == 0 {
            return Err(invalid("traffic.payload", "must be positive"));
        }
        nonnegative("traffic.start", self.traffic.start)?;
        for pair in &self.traffic.pairs {
            if pair[0] == pair[1] || pair[0] >= self.nodes || pair[1] >= self.nodes {
                return Err(invalid(
                    "traffic.pairs",
                    format!("{pair:?} must name two distinct nodes below N"),
                ));
            }
        }
        let c = &self.channel;
        positive("channel.data_rate", c.data_rate)?;
        positive("channel.basic_rate", c.basic_rate)?;
        nonnegative("channel.plcp", c.plcp)?;
        nonnegative("channel.difs", c.difs)?;
        nonnegative("channel.sifs", c.sifs)?;
        nonnegative("channel.slot", c.slot)?;
        if c.cw_min > c.cw_max {
            return Err(invalid("channel.cw_min", "must not exceed channel.cw_max"));
        }
        if c.queue_limit == 0 {
            return Err(invalid("channel.queue_limit", "must be positive"));
        }
        positive("device.cpu_ips", self.device.cpu_ips)?;
        positive("olsr.hello_interval", self.olsr.hello_interval)?;
        positive("olsr.tc_interval", self.olsr.tc_interval)?;
        positive("olsr.validity_factor", self.olsr.validity_factor)?;
        nonnegative("olsr.forward_jitter", self.olsr.forward_jitter)?;
        positive("aodv.node_traversal_time", self.aodv.node_traversal_time)?;
        if self.aodv.net_diameter == 0 {
            return Err(invalid("aodv.net_diameter", "must be at least 1"));
        }
        positive("aodv.active_route_timeout", self.aodv.active_route_timeout)?;
        nonnegative("aodv.forward_jitter", self.aodv.forward_jitter)?;
        if self.dsr.cache_paths == 0 {
            return Err(invalid("dsr.cache_paths", "must be at least 1"));
        }
        positive("dsr.cache_expiry", self.dsr.cache_expiry)?;
        positive("dsr.request_period", self.dsr.request_period)?;
        positive("dsr.max_request_period", self.dsr.max_request_period)?;
        positive("dsr.send_buffer_timeout", self.dsr.send_buffer_timeout)?;
        nonnegative("dsr.forward_jitter", self.dsr.forward_jitter)?;
        let cml = &self.cml;
        if cml.nst < 1 {
            return Err(invalid("cml.nst", "must be at least 1"));
        }
        if cml.x >= cml.nst {
            return Err(invalid(
                "cml.x",
                format!("must be below cml.nst ({}), got {}", cml.nst, cml.x),
            ));
        }
        positive("cml.t_osc", cml.t_osc)?;
        positive("cml.k", cml.k)?;
        positive("cml.guard_tc_intervals", cml.guard_tc_intervals)?;
        positive("cml.probe_window_traversals", cml.probe_window_traversals)?;
        nonnegative("cml.forward_jitter", cml.forward_jitter)?;
        for role in &self.adversary {
            if role.node >= self.nodes {
                return Err(invalid(
                    "adversary.node",
                    format!("node {} does not exist", role.node),
                ));
            }
            match &role.behavior {
                AdversaryBehavior::ForgeCp { period, start, .. } => {
                    positive("adversary.period", *period)?;
                    nonnegative("adversary.start", *start)?;
                }
                AdversaryBehavior::Oscillate {
                    group,
                    period,
                    start,
                } => {
                    positive("adversary.period", *period)?;
                    nonnegative("adversary.start", *start)?;
                    if group.is_empty() || group.iter().any(|g| *g >= self.nodes) {
                        return Err(invalid("adversary.group", "must list existing nodes"));
                    }
                }
                AdversaryBehavior::TamperHcreq | AdversaryBehavior::DropCp => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.duration, 300.0);
        assert_eq!(cfg.warmup, 50.0);
        assert_eq!(cfg.link.radius, 250.0);
        assert_eq!(cfg.cml.nst, 10);
        assert_eq!(cfg.traffic.flow_count(5), 4);
        assert_eq!(cfg.traffic.flow_count(30), 10);
    }

    #[test]
    fn single_node_is_rejected_by_name() {
        let err = ScenarioConfig::from_toml_str("nodes = 1").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { key: "nodes", .. }));
        assert!(err.to_string().contains("N"));
    }

    #[test]
    fn tolerance_must_stay_below_threshold() {
        let err = ScenarioConfig::from_toml_str("[cml]\nnst = 10\nx = 10\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { key: "cml.x", .. }));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ScenarioConfig::from_toml_str("[cml]\nthreshold = 4\n").unwrap_err();
        assert!(err.to_string().contains("threshold"));
        assert!(ScenarioConfig::from_toml_str("colour = 1").is_err());
    }

    #[test]
    fn warmup_must_precede_end() {
        let err = ScenarioConfig::from_toml_str("duration = 10.0\nwarmup = 10.0").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { key: "warmup", .. }));
    }

    #[test]
    fn adversaries_parse() {
        let text = r#"
            nodes = 8
            security = "hybrid"
            [[adversary]]
            node = 7
            behavior = "forge-cp"
            target = "r"
            period = 20.0

            [[adversary]]
            node = 6
            behavior = "drop-cp"
        "#;
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.security, SecurityMode::Hybrid);
        assert_eq!(cfg.adversary.len(), 2);
        assert!(matches!(
            cfg.adversary[1].behavior,
            AdversaryBehavior::DropCp
        ));
    }

    #[test]
    fn shipped_file_matches_defaults_except_k() {
        let shipped = ScenarioConfig::shipped();
        assert!((shipped.cml.k - 0.48).abs() < 1e-12);
        let mut d = ScenarioConfig::default();
        d.cml.k = shipped.cml.k;
        assert_eq!(shipped, d);
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = ScenarioConfig::default();
        cfg.adversary.push(AdversaryRole {
            node: 2,
            behavior: AdversaryBehavior::Oscillate {
                group: vec![2, 3],
                period: 15.0,
                start: 60.0,
            },
        });
        cfg.placement.positions = (0..10).map(|i| [f64::from(i) * 10.0, 5.0]).collect();
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
