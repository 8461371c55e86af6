use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use emanet_sim::acceptance;
use emanet_sim::harness::{self, SweepSpec, ATTACK_PRESETS};
use emanet_sim::security::SecurityMode;
use emanet_sim::sim;
use emanet_sim::{Protocol, ScenarioConfig};

#[derive(Parser)]
#[command(name = "emanet", version, about = "Emergency MANET routing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file; config/default.toml when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => ScenarioConfig::shipped(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Runs one scenario.
    Run {
        #[command(flatten)]
        common: Common,
        /// Writes a per-event trace to trace.log.
        #[arg(long)]
        trace: bool,
    },
    /// Runs every (protocol, security, size, seed) cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `start:end:step` or a comma list.
        #[arg(long, default_value = "5:50:5")]
        sizes: String,
        /// Number of seeds, starting at the scenario seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_value = "olsr,aodv,dsr,cml")]
        protocols: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "none")]
        security: Vec<String>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        parallel: usize,
    },
    /// Fits the size-from-hops constant on static topologies.
    CalibrateK {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "5:50:5")]
        sizes: String,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Runs an adversary preset with and without SCML.
    Attack {
        #[command(flatten)]
        common: Common,
        /// One of forge-cp, oscillate, tamper-hcreq, drop-cp.
        preset: String,
    },
    /// Evaluates every acceptance criterion and prints one line each.
    Accept {
        #[arg(long, default_value_t = 0)]
        parallel: usize,
    },
}

fn parse_protocols(names: &[String]) -> Result<Vec<Protocol>> {
    names
        .iter()
        .map(|n| Protocol::parse(n).with_context(|| format!("unknown protocol `{n}`")))
        .collect()
}

fn parse_modes(names: &[String]) -> Result<Vec<SecurityMode>> {
    names
        .iter()
        .map(|n| SecurityMode::parse(n).with_context(|| format!("unknown security mode `{n}`")))
        .collect()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { common, trace } => {
            let cfg = common.scenario()?;
            let out = if trace {
                sim::run_traced(&cfg)?
            } else {
                sim::run(&cfg)?
            };
            std::fs::create_dir_all(&common.out)?;
            let summary = emanet_sim::metrics::summary_csv(std::slice::from_ref(&out.summary));
            std::fs::write(common.out.join("summary.csv"), &summary)?;
            std::fs::write(common.out.join("transitions.log"), out.transitions_log())?;
            std::fs::write(common.out.join("manifest.toml"), cfg.to_toml())?;
            if let Some(lines) = &out.trace {
                std::fs::write(common.out.join("trace.log"), lines.join("\n") + "\n")?;
            }
            print!("{summary}");
        }
        Command::Sweep {
            common,
            sizes,
            seeds,
            protocols,
            security,
            parallel,
        } => {
            let base = common.scenario()?;
            let first = base.seed;
            let mut spec = SweepSpec::new(base);
            spec.sizes = harness::parse_sizes(&sizes)?;
            spec.seeds = (first..first + seeds).collect();
            spec.protocols = parse_protocols(&protocols)?;
            spec.modes = parse_modes(&security)?;
            let result = harness::run_sweep(&spec, parallel)?;
            harness::write_outputs(&common.out, &result)?;
            print!("{}", emanet_sim::metrics::summary_csv(&result.means()));
            eprintln!(
                "wrote {} cells to {}",
                result.cells.len(),
                common.out.display()
            );
        }
        Command::CalibrateK {
            common,
            sizes,
            seeds,
        } => {
            let base = common.scenario()?;
            let seeds: Vec<u64> = (base.seed..base.seed + seeds).collect();
            let cal = harness::calibrate_k(&base, &harness::parse_sizes(&sizes)?, &seeds);
            println!("N,component,diameter");
            for p in &cal.points {
                println!("{},{},{}", p.nodes, p.component, p.diameter);
            }
            println!("k = {:.4}", cal.k);
        }
        Command::Attack { common, preset } => {
            if !ATTACK_PRESETS.contains(&preset.as_str()) {
                bail!(
                    "unknown preset `{preset}`, expected one of {}",
                    ATTACK_PRESETS.join(", ")
                );
            }
            let base = common.scenario()?;
            std::fs::create_dir_all(&common.out)?;
            for mode in [SecurityMode::None, SecurityMode::Hybrid] {
                let mut cfg = harness::attack_preset(&preset, &base)?;
                cfg.security = mode;
                let out = sim::run(&cfg)?;
                let adversaries: Vec<_> = cfg.adversary.iter().flat_map(|a| a.members()).collect();
                println!(
                    "{preset} security={} shifts={} adversary-shifts={} rejected={}",
                    mode.label(),
                    out.transitions.iter().filter(|t| t.shift).count(),
                    harness::adversary_shifts(&out, &adversaries),
                    out.metrics.security.rejected,
                );
                std::fs::write(
                    common
                        .out
                        .join(format!("{preset}-{}.transitions.log", mode.label())),
                    out.transitions_log(),
                )?;
            }
        }
        Command::Accept { parallel } => {
            let report = acceptance::evaluate_all(parallel)?;
            for line in report.lines() {
                println!("{line}");
            }
            if !report.all_passed() {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
