//! Deterministic discrete-event simulator for emergency mobile ad-hoc
//! networks.
//!
//! The crate models the ChaMeLeon (CML) hybrid routing protocol alongside
//! OLSR, AODV and DSR, the SCML IPsec overlay as an analytic cost model,
//! a set of protocol-level adversaries, and the metrics needed to compare
//! them across network sizes.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod acceptance;
pub mod aodv;
pub mod cml;
pub mod config;
pub mod dsr;
pub mod harness;
pub mod kernel;
pub mod metrics;
pub mod mobility;
pub mod olsr;
pub mod packet;
pub mod proto;
pub mod security;
pub mod sim;

/// Identifier of a simulated node; indexes per-node vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(u32::try_from(i).expect("node index fits in u32"))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub use config::{Protocol, ScenarioConfig};
pub use metrics::{MetricLog, RunSummary};
pub use sim::{run, RunOutput};
