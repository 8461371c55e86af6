//! Sweeps over protocols, security modes, network sizes and seeds; CSV,
//! plot-script and manifest output; size-estimate calibration; adversary
//! presets.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ChannelConfig, MobilityConfig, Protocol, ScenarioConfig};
use crate::kernel::RandomStream;
use crate::metrics::{cumulate, cumulative_csv, summary_csv, CumulativePoint, RunSummary};
use crate::mobility::{adjacency, sample_waypoint, Area, LinkModel, Point};
use crate::packet::StablePhase;
use crate::security::{AdversaryBehavior, AdversaryRole, SecurityMode};
use crate::sim::{self, RunOutput, SimError};
use crate::NodeId;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("sweep cell {cell} failed: {source}")]
    Cell {
        cell: String,
        #[source]
        source: SimError,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad size range `{0}`, expected start:end:step")]
    Sizes(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("unknown attack preset `{0}`")]
    UnknownPreset(String),
}

/// Parses `start:end:step` (inclusive) or a comma-separated list.
pub fn parse_sizes(s: &str) -> Result<Vec<u32>, HarnessError> {
    let bad = || HarnessError::Sizes(s.to_string());
    if s.contains(':') {
        let parts: Vec<u32> = s
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let [start, end, step] = parts[..] else {
            return Err(bad());
        };
        if step == 0 || start > end {
            return Err(bad());
        }
        Ok((start..=end).step_by(step as usize).collect())
    } else {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub sizes: Vec<u32>,
    pub seeds: Vec<u64>,
    pub protocols: Vec<Protocol>,
    pub modes: Vec<SecurityMode>,
}

impl SweepSpec {
    pub fn new(base: ScenarioConfig) -> Self {
        Self {
            base,
            sizes: (5..=50).step_by(5).collect(),
            seeds: (1..=5).collect(),
            protocols: Protocol::ALL.to_vec(),
            modes: vec![SecurityMode::None],
        }
    }

    /// Every cell in deterministic order: protocol, mode, size, seed.
    pub fn cells(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &protocol in &self.protocols {
            for &security in &self.modes {
                for &nodes in &self.sizes {
                    for &seed in &self.seeds {
                        out.push(ScenarioConfig {
                            protocol,
                            security,
                            nodes,
                            seed,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

fn cell_label(c: &ScenarioConfig) -> String {
    format!(
        "{}/{}/N={}/seed={}",
        c.protocol,
        c.security.label(),
        c.nodes,
        c.seed
    )
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub config: ScenarioConfig,
    pub output: RunOutput,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn summaries(&self) -> Vec<RunSummary> {
        self.cells
            .iter()
            .map(|c| c.output.summary.clone())
            .collect()
    }

    /// Seed means per (protocol, mode, N), in sweep order.
    pub fn means(&self) -> Vec<RunSummary> {
        let mut groups: Vec<((Protocol, SecurityMode, u32), Vec<RunSummary>)> = Vec::new();
        for c in &self.cells {
            let key = (c.config.protocol, c.config.security, c.config.nodes);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(c.output.summary.clone()),
                None => groups.push((key, vec![c.output.summary.clone()])),
            }
        }
        groups
            .into_iter()
            .filter_map(|(_, rows)| RunSummary::mean_of(&rows))
            .collect()
    }

    pub fn mean(&self, protocol: Protocol, mode: SecurityMode, nodes: u32) -> Option<RunSummary> {
        let rows: Vec<RunSummary> = self
            .cells
            .iter()
            .filter(|c| {
                c.config.protocol == protocol
                    && c.config.security == mode
                    && c.config.nodes == nodes
            })
            .map(|c| c.output.summary.clone())
            .collect();
        RunSummary::mean_of(&rows)
    }

    pub fn cell(
        &self,
        protocol: Protocol,
        mode: SecurityMode,
        nodes: u32,
        seed: u64,
    ) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.config.protocol == protocol
                && c.config.security == mode
                && c.config.nodes == nodes
                && c.config.seed == seed
        })
    }

    /// Cumulative series per (protocol, mode), ordered by size.
    pub fn cumulative(&self) -> Vec<(String, String, Vec<CumulativePoint>)> {
        let means = self.means();
        let mut keys: Vec<(String, String)> = Vec::new();
        for m in &means {
            let k = (m.meta.protocol.clone(), m.meta.security_mode.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(p, s)| {
                let mut rows: Vec<RunSummary> = means
                    .iter()
                    .filter(|m| m.meta.protocol == p && m.meta.security_mode == s)
                    .cloned()
                    .collect();
                rows.sort_by_key(|r| r.meta.nodes);
                let series = cumulate(&rows);
                (p, s, series)
            })
            .collect()
    }

    pub fn transitions_log(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            if c.output.transitions.is_empty() {
                continue;
            }
            let _ = writeln!(out, "# {}", cell_label(&c.config));
            out.push_str(&c.output.transitions_log());
        }
        out
    }

    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            let _ = writeln!(out, "# ---- {} ----", cell_label(&c.config));
            out.push_str(&c.config.to_toml());
            out.push('\n');
        }
        out
    }
}

/// Runs a list of scenarios, `parallel` at a time (0 = all cores). Results
/// come back in input order regardless of scheduling.
pub fn run_cells(
    cells: Vec<ScenarioConfig>,
    parallel: usize,
) -> Result<Vec<CellResult>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| {
        cells
            .into_par_iter()
            .map(|config| match sim::run(&config) {
                Ok(output) => Ok(CellResult { config, output }),
                Err(source) => Err(HarnessError::Cell {
                    cell: cell_label(&config),
                    source,
                }),
            })
            .collect()
    })
}

pub fn run_sweep(spec: &SweepSpec, parallel: usize) -> Result<SweepResult, HarnessError> {
    Ok(SweepResult {
        cells: run_cells(spec.cells(), parallel)?,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(&path, contents).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `summary.csv`, `comparison.csv`, `cumulative.csv`,
/// `transitions.log`, `manifest.toml` and the plot scripts.
pub fn write_outputs(dir: &Path, result: &SweepResult) -> Result<(), HarnessError> {
    write(dir, "summary.csv", &summary_csv(&result.summaries()))?;
    write(dir, "comparison.csv", &summary_csv(&result.means()))?;
    write(dir, "cumulative.csv", &cumulative_csv(&result.cumulative()))?;
    write(dir, "transitions.log", &result.transitions_log())?;
    write(dir, "manifest.toml", &result.manifest())?;
    for (name, script) in plot_scripts() {
        write(dir, &format!("plots/{name}"), &script)?;
    }
    Ok(())
}

const PLOT_PRELUDE: &str = r#"import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
DATA = HERE.parent


def load(name):
    with open(DATA / name, newline="") as fh:
        return list(csv.DictReader(fh))


def series(rows, column, mode=None):
    out = defaultdict(list)
    for r in rows:
        if mode is not None and r["security_mode"] != mode:
            continue
        if r[column] == "NA":
            continue
        key = r["protocol"] if mode is not None else f'{r["protocol"]}/{r["security_mode"]}'
        out[key].append((int(r["N"]), float(r[column])))
    return {k: sorted(v) for k, v in out.items()}


def plot(curves, ylabel, title, out):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, pts in sorted(curves.items()):
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel("number of nodes")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(HERE / out)
    print("wrote", HERE / out, file=sys.stderr)
"#;

/// `(file name, file, column, mode filter, y label, title)`.
type Figure = (
    &'static str,
    &'static str,
    &'static str,
    Option<&'static str>,
    &'static str,
    &'static str,
);

const FIGURES: [Figure; 7] = [
    (
        "delay.py",
        "comparison.csv",
        "avg_delay_s",
        Some("none"),
        "average end-to-end delay (s)",
        "Average delay",
    ),
    (
        "cumulative_delay.py",
        "cumulative.csv",
        "cum_delay_s",
        Some("none"),
        "cumulative delay (s)",
        "Cumulative delay",
    ),
    (
        "cumulative_jitter.py",
        "cumulative.csv",
        "cum_jitter_s",
        Some("none"),
        "cumulative jitter (s)",
        "Cumulative jitter",
    ),
    (
        "routing_load.py",
        "comparison.csv",
        "ctl_bytes",
        Some("none"),
        "routing load (bytes)",
        "Routing load",
    ),
    (
        "security_delay.py",
        "cumulative.csv",
        "cum_delay_s",
        None,
        "cumulative delay (s)",
        "Delay by security mode",
    ),
    (
        "security_load.py",
        "cumulative.csv",
        "cum_ctl_bytes",
        None,
        "cumulative routing load (bytes)",
        "Routing load by security mode",
    ),
    (
        "goodput.py",
        "cumulative.csv",
        "cum_goodput_ratio",
        None,
        "cumulative goodput ratio",
        "Goodput ratio",
    ),
];

pub fn plot_scripts() -> Vec<(String, String)> {
    FIGURES
        .iter()
        .map(|(name, file, column, mode, ylabel, title)| {
            let mode = mode.map_or_else(|| "None".to_string(), |m| format!("{m:?}"));
            let png = name.replace(".py", ".png");
            let body = format!(
                "{PLOT_PRELUDE}\n\nif __name__ == \"__main__\":\n    plot(series(load({file:?}), {column:?}, {mode}), {ylabel:?}, {title:?}, {png:?})\n"
            );
            (name.to_string(), body)
        })
        .collect()
}

/// Hop-count eccentricities by breadth-first search.
pub fn bfs_distances(adj: &[Vec<NodeId>], from: NodeId) -> Vec<Option<u32>> {
    let mut dist = vec![None; adj.len()];
    dist[from.idx()] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u.idx()].expect("queued nodes have a distance");
        for v in &adj[u.idx()] {
            if dist[v.idx()].is_none() {
                dist[v.idx()] = Some(d + 1);
                queue.push_back(*v);
            }
        }
    }
    dist
}

/// One static topology used for calibration: size and diameter of its
/// largest connected component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub nodes: u32,
    pub component: u32,
    pub diameter: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub k: f64,
    pub points: Vec<CalibrationPoint>,
}

/// Random static placement under `base`'s area and radius.
pub fn static_topology(base: &ScenarioConfig, nodes: u32, seed: u64) -> Vec<Vec<NodeId>> {
    let area = base.area.area();
    let positions = random_positions(&area, nodes, seed);
    adjacency(
        &positions,
        &vec![true; nodes as usize],
        &LinkModel {
            radius: base.link.radius,
        },
        &area,
    )
}

/// Uniform positions on the free part of `area`.
pub fn random_positions(area: &Area, nodes: u32, seed: u64) -> Vec<Point> {
    let mut s = RandomStream::new(seed).fork(1, 0);
    (0..nodes)
        .map(|_| sample_waypoint(&mut s, area).expect("validated area has free space"))
        .collect()
}

/// Random static placement of `nodes` in an open `side` x `side` square
/// whose unit-disk graph is connected. Rejected draws advance the seed.
pub fn connected_placement(nodes: u32, side: f64, radius: f64, seed: u64) -> Vec<[f64; 2]> {
    let area = Area::open(side, side);
    let link = LinkModel { radius };
    (0u64..)
        .map(|attempt| {
            random_positions(
                &area,
                nodes,
                seed.wrapping_mul(1_000_003).wrapping_add(attempt),
            )
        })
        .find(|pos| {
            let adj = adjacency(pos, &vec![true; pos.len()], &link, &area);
            bfs_distances(&adj, NodeId(0)).iter().all(Option::is_some)
        })
        .expect("the attempt counter is unbounded")
        .into_iter()
        .map(|p| [p.x, p.y])
        .collect()
}

fn largest_component(adj: &[Vec<NodeId>]) -> (u32, u32) {
    let mut best = (0, 0);
    let mut seen = vec![false; adj.len()];
    for s in 0..adj.len() {
        if seen[s] {
            continue;
        }
        let d = bfs_distances(adj, NodeId::from(s));
        let members: Vec<usize> = (0..adj.len()).filter(|&i| d[i].is_some()).collect();
        for &m in &members {
            seen[m] = true;
        }
        let diameter = members
            .iter()
            .map(|&m| {
                bfs_distances(adj, NodeId::from(m))
                    .into_iter()
                    .flatten()
                    .max()
                    .unwrap_or(0)
            })
            .max()
            .unwrap_or(0);
        let size = members.len() as u32;
        if size > best.0 {
            best = (size, diameter);
        }
    }
    best
}

/// Least-squares fit of `N = k * h^2` through the origin, over the largest
/// component of seeded static topologies.
pub fn calibrate_k(base: &ScenarioConfig, sizes: &[u32], seeds: &[u64]) -> Calibration {
    let mut points = Vec::new();
    for &n in sizes {
        for &seed in seeds {
            let adj = static_topology(base, n, seed);
            let (component, diameter) = largest_component(&adj);
            points.push(CalibrationPoint {
                nodes: n,
                component,
                diameter,
            });
        }
    }
    let (num, den) = points.iter().fold((0.0, 0.0), |(num, den), p| {
        let h2 = f64::from(p.diameter).powi(2);
        (num + f64::from(p.component) * h2, den + h2 * h2)
    });
    let k = if den > 0.0 { num / den } else { 1.0 };
    Calibration { k, points }
}

/// Named adversary scenarios.
pub const ATTACK_PRESETS: [&str; 4] = ["forge-cp", "oscillate", "tamper-hcreq", "drop-cp"];

/// Node positions on a jittered grid with spacing `step`; connected for
/// `step` below the link radius.
pub fn grid_positions(nodes: u32, columns: u32, step: f64, origin: (f64, f64)) -> Vec<[f64; 2]> {
    (0..nodes)
        .map(|i| {
            [
                origin.0 + f64::from(i % columns) * step,
                origin.1 + f64::from(i / columns) * step,
            ]
        })
        .collect()
}

/// A static connected network of `nodes` with evenly spread flows.
pub fn static_grid(base: &ScenarioConfig, nodes: u32) -> ScenarioConfig {
    let columns = (f64::from(nodes).sqrt().ceil() as u32).max(1);
    let mut cfg = ScenarioConfig {
        nodes,
        mobility: MobilityConfig::stationary(),
        ..base.clone()
    };
    cfg.placement.positions = grid_positions(nodes, columns, 200.0, (100.0, 100.0));
    cfg
}

pub fn attack_preset(name: &str, base: &ScenarioConfig) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = static_grid(
        &ScenarioConfig {
            protocol: Protocol::Cml,
            ..base.clone()
        },
        8,
    );
    let role = match name {
        "forge-cp" => AdversaryRole {
            node: 7,
            behavior: AdversaryBehavior::ForgeCp {
                target: StablePhase::Reactive,
                period: 40.0,
                start: 60.0,
            },
        },
        "oscillate" => {
            cfg = static_grid(&cfg, 12);
            cfg.cml.x = 2;
            AdversaryRole {
                node: 10,
                behavior: AdversaryBehavior::Oscillate {
                    group: vec![10, 11],
                    period: 20.0,
                    start: 60.0,
                },
            }
        }
        "tamper-hcreq" => {
            cfg.cml.initial_phase = StablePhase::Reactive;
            cfg.channel = ChannelConfig::ideal();
            AdversaryRole {
                node: 3,
                behavior: AdversaryBehavior::TamperHcreq,
            }
        }
        "drop-cp" => AdversaryRole {
            node: 4,
            behavior: AdversaryBehavior::DropCp,
        },
        other => return Err(HarnessError::UnknownPreset(other.to_string())),
    };
    cfg.adversary = vec![role];
    Ok(cfg)
}

/// Shifts attributable to a CP originated by one of `adversaries`.
pub fn adversary_shifts(out: &RunOutput, adversaries: &[NodeId]) -> usize {
    out.transitions
        .iter()
        .filter(|t| t.shift && t.cp_origin().is_some_and(|o| adversaries.contains(&o)))
        .count()
}

/// Per-node count of confirmed shifts.
pub fn shifts_per_node(out: &RunOutput) -> BTreeMap<NodeId, Vec<f64>> {
    let mut m: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
    for t in out.transitions.iter().filter(|t| t.shift) {
        m.entry(t.node).or_default().push(t.time);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_ranges() {
        assert_eq!(
            parse_sizes("5:50:5").unwrap(),
            vec![5, 10, 15, 20, 25, 30, 35, 40, 45, 50]
        );
        assert_eq!(parse_sizes("5,20").unwrap(), vec![5, 20]);
        assert!(parse_sizes("5:50").is_err());
        assert!(parse_sizes("5:1:1").is_err());
    }

    #[test]
    fn cells_are_ordered() {
        let mut spec = SweepSpec::new(ScenarioConfig::default());
        spec.sizes = vec![5, 10];
        spec.seeds = vec![1, 2];
        spec.protocols = vec![Protocol::Olsr, Protocol::Aodv];
        let labels: Vec<String> = spec.cells().iter().map(cell_label).collect();
        assert_eq!(labels[0], "olsr/none/N=5/seed=1");
        assert_eq!(labels[1], "olsr/none/N=5/seed=2");
        assert_eq!(labels[2], "olsr/none/N=10/seed=1");
        assert_eq!(labels[4], "aodv/none/N=5/seed=1");
    }

    #[test]
    fn bfs_on_chain() {
        let adj = vec![
            vec![NodeId(1)],
            vec![NodeId(0), NodeId(2)],
            vec![NodeId(1)],
            vec![],
        ];
        assert_eq!(
            bfs_distances(&adj, NodeId(0)),
            vec![Some(0), Some(1), Some(2), None]
        );
        assert_eq!(largest_component(&adj), (3, 2));
    }

    #[test]
    fn plot_scripts_cover_every_figure() {
        let scripts = plot_scripts();
        assert_eq!(scripts.len(), 7);
        assert!(scripts.iter().all(|(_, s)| s.contains("savefig")));
    }
}
