//! Runs scenarios and sweeps, and renders their results.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use thiserror::Error;

use crate::ctp::CtpEngine;
use crate::engine::RoutingEngine;
use crate::kernel::{SimDuration, SimError, SimTime};
use crate::loadng::LoadngEngine;
use crate::messages::Address;
use crate::metrics::{aggregate, avg_delay, overhead_rate, pdr, MetricsReport, PacketRecord, Summary};
use crate::packet::Direction;
use crate::rpl::RplEngine;
use crate::scenario::{generate_topology, Backend, ConfigError, ScenarioConfig, SweepSpec, TopologyKind};
use crate::sim::{RunOutcome, Simulation};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("run panicked: {0}")]
    Panic(String),
}

pub const CONCENTRATOR: Address = Address(0);

fn simulate<E: RoutingEngine>(cfg: &ScenarioConfig, engines: Vec<E>) -> Result<RunOutcome, RunError> {
    let topo = generate_topology(cfg)?;
    let s = &cfg.scenario;
    let mut sim = Simulation::new(&topo.positions, cfg.radio.clone(), cfg.mac.clone(), s.seed, engines, CONCENTRATOR);
    if cfg.traffic.enabled {
        sim.set_traffic(cfg.traffic.clone());
    }
    for f in &cfg.failures {
        sim.schedule_failure(SimTime::from_secs_f64(f.at), Address(f.node))?;
    }
    sim.run_until(SimTime::from_secs_f64(s.duration))?;
    Ok(sim.finish()?)
}

/// Run one configuration with its own seed.
pub fn run_outcome(cfg: &ScenarioConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let n = cfg.scenario.node_count;
    let p = &cfg.protocol;
    let addrs = (0..n).map(|i| Address(i as u16));
    match cfg.scenario.backend {
        Backend::Loadng => simulate(cfg, addrs.map(|a| LoadngEngine::new(a, p.loadng())).collect()),
        Backend::LoadngCtp => {
            simulate(cfg, addrs.map(|a| CtpEngine::new(a, CONCENTRATOR, p.loadng(), p.ctp())).collect())
        }
        Backend::Rpl => simulate(cfg, addrs.map(|a| RplEngine::new(a, CONCENTRATOR, p.rpl())).collect()),
    }
}

pub fn report(cfg: &ScenarioConfig, outcome: &RunOutcome) -> MetricsReport {
    let s = &cfg.scenario;
    let warmup = SimTime::from_secs_f64(s.warmup);
    let measured: Vec<PacketRecord> =
        outcome.metrics.records().iter().filter(|r| r.created_at >= warmup).cloned().collect();
    MetricsReport {
        cfg_id: cfg.cfg_id(),
        backend: s.backend.name().to_string(),
        node_count: s.node_count,
        distance: (s.topology == TopologyKind::DistanceLine).then_some(s.concentrator_distance).flatten(),
        seed: s.seed,
        pdr_up: pdr(&measured, Direction::Upward),
        pdr_down: pdr(&measured, Direction::Downward),
        delay_up: avg_delay(&measured, Direction::Upward),
        delay_down: avg_delay(&measured, Direction::Downward),
        overhead_bytes_per_sec: overhead_rate(outcome.metrics.control_bytes(), SimDuration::from_secs_f64(s.duration)),
        fates_up: outcome.metrics.fate_counts(Direction::Upward, warmup),
        fates_down: outcome.metrics.fate_counts(Direction::Downward, warmup),
        warmup_secs: s.warmup,
        duration_secs: s.duration,
        control_bytes: outcome.metrics.control_bytes(),
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsReport, RunError> {
    let outcome = run_outcome(cfg)?;
    Ok(report(cfg, &outcome))
}

/// Every (backend, axis value, seed) run of a sweep, in output order.
pub fn expand(spec: &SweepSpec) -> Vec<ScenarioConfig> {
    let base_seed = spec.base.scenario.seed;
    let mut runs = Vec::new();
    for cell in spec.cells() {
        for i in 0..spec.seeds {
            let mut c = cell.clone();
            c.scenario.seed = base_seed.wrapping_add(i);
            runs.push(c);
        }
    }
    runs
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub reports: Vec<MetricsReport>,
    /// (run label, error) for every aborted run.
    pub aborted: Vec<(String, RunError)>,
}

fn label(cfg: &ScenarioConfig) -> String {
    let s = &cfg.scenario;
    match s.concentrator_distance.filter(|_| s.topology == TopologyKind::DistanceLine) {
        Some(d) => format!("{} n={} d={} seed={}", s.backend, s.node_count, d, s.seed),
        None => format!("{} n={} seed={}", s.backend, s.node_count, s.seed),
    }
}

/// Runs are independent and executed in parallel; results keep the
/// deterministic expansion order.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome, ConfigError> {
    spec.validate()?;
    let runs = expand(spec);
    let results: Vec<Result<MetricsReport, RunError>> = runs
        .par_iter()
        .map(|cfg| {
            catch_unwind(AssertUnwindSafe(|| run_scenario(cfg))).unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".into());
                Err(RunError::Panic(msg))
            })
        })
        .collect();
    let mut out = SweepOutcome { reports: Vec::new(), aborted: Vec::new() };
    for (cfg, r) in runs.iter().zip(results) {
        match r {
            Ok(rep) => out.reports.push(rep),
            Err(e) => out.aborted.push((label(cfg), e)),
        }
    }
    Ok(out)
}

pub const CSV_HEADER: [&str; 24] = [
    "cfg-id",
    "backend",
    "node_count",
    "distance",
    "seed",
    "pdr_up",
    "pdr_down",
    "delay_up_ms",
    "delay_down_ms",
    "overhead_Bps",
    "up_created",
    "up_delivered",
    "up_mac_drop",
    "up_no_route",
    "up_discovery_timeout",
    "up_buffer_overflow",
    "up_in_flight",
    "down_created",
    "down_delivered",
    "down_mac_drop",
    "down_no_route",
    "down_discovery_timeout",
    "down_buffer_overflow",
    "down_in_flight",
];

fn opt(v: Option<f64>, scale: f64, decimals: usize) -> String {
    v.map_or_else(String::new, |x| format!("{:.*}", decimals, x * scale))
}

pub fn write_csv<W: Write>(w: W, reports: &[MetricsReport]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in reports {
        let mut row = vec![
            r.cfg_id.clone(),
            r.backend.clone(),
            r.node_count.to_string(),
            opt(r.distance, 1.0, 1),
            r.seed.to_string(),
            opt(r.pdr_up, 1.0, 6),
            opt(r.pdr_down, 1.0, 6),
            opt(r.delay_up, 1e3, 3),
            opt(r.delay_down, 1e3, 3),
            format!("{:.3}", r.overhead_bytes_per_sec),
        ];
        for f in [&r.fates_up, &r.fates_down] {
            row.extend(
                [f.created, f.delivered, f.mac_drop, f.no_route, f.discovery_timeout, f.buffer_overflow, f.in_flight]
                    .map(|c| c.to_string()),
            );
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Aggregate reports per configuration, keeping first-seen order.
pub fn summarize(reports: &[MetricsReport]) -> Vec<Summary> {
    let mut ids: Vec<&str> = Vec::new();
    for r in reports {
        if !ids.contains(&r.cfg_id.as_str()) {
            ids.push(&r.cfg_id);
        }
    }
    ids.into_iter()
        .map(|id| {
            let group: Vec<MetricsReport> = reports.iter().filter(|r| r.cfg_id == id).cloned().collect();
            aggregate(&group).expect("group shares one cfg id")
        })
        .collect()
}

pub fn format_summary(summaries: &[Summary], warmup_secs: f64) -> String {
    use std::fmt::Write as _;
    fn cell(s: &Option<crate::metrics::Stat>, scale: f64, decimals: usize) -> String {
        match s {
            Some(s) => format!("{:.*} \u{b1} {:.*}", decimals, s.mean * scale, decimals, s.stddev * scale),
            None => "-".into(),
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "metrics exclude the first {warmup_secs} s of each run");
    let _ = writeln!(
        out,
        "{:<12} {:>6} {:>8} {:>5} {:>20} {:>20} {:>22} {:>22} {:>22}",
        "backend", "nodes", "dist_m", "runs", "pdr_up", "pdr_down", "delay_up_ms", "delay_down_ms", "overhead_Bps"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>8} {:>5} {:>20} {:>20} {:>22} {:>22} {:>22}",
            s.backend,
            s.node_count,
            s.distance.map_or_else(|| "-".into(), |d| format!("{d:.0}")),
            s.runs,
            cell(&s.pdr_up, 1.0, 4),
            cell(&s.pdr_down, 1.0, 4),
            cell(&s.delay_up, 1e3, 1),
            cell(&s.delay_down, 1e3, 1),
            cell(&s.overhead_bytes_per_sec, 1.0, 2),
        );
    }
    out
}
