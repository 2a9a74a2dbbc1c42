//! Run one scenario and dump run internals.
//!
//! cargo run --release -p amisim --example inspect -- <backend> <nodes> <seed> [secs]

use amisim::packet::Direction;
use amisim::runner::{report, run_outcome};
use amisim::{Backend, ScenarioConfig, SimTime};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ScenarioConfig::default();
    cfg.scenario.backend = args.first().map_or(Backend::Rpl, |s| s.parse().unwrap());
    cfg.scenario.node_count = args.get(1).map_or(60, |s| s.parse().unwrap());
    cfg.scenario.seed = args.get(2).map_or(1, |s| s.parse().unwrap());
    cfg.scenario.duration = args.get(3).map_or(1800.0, |s| s.parse().unwrap());
    let out = run_outcome(&cfg).expect("run");
    let rep = report(&cfg, &out);
    println!("{rep:#?}");
    println!("mac {:?} collisions {} ctl-drops {}", out.mac, out.collisions, out.control_frames_dropped);
    println!("notes {:?}", out.notes);
    println!("control tx {:?}", out.metrics.control_tx_counts());
    let w = SimTime::from_secs_f64(cfg.scenario.warmup);
    println!("up {:?}", out.metrics.fate_counts(Direction::Upward, w));
    let mut by_kind = std::collections::BTreeMap::new();
    for r in out.metrics.records() {
        if let Some(d) = r.delivered_at {
            let e = by_kind.entry(format!("{:?}", r.kind)).or_insert((0u64, 0u64, u64::MAX));
            let us = (d - r.created_at).as_micros();
            e.0 += 1;
            e.1 += us;
            e.2 = e.2.min(us);
        }
    }
    for (k, (n, sum, min)) in by_kind {
        println!("{k}: delivered {n} mean {:.1} ms min {:.1} ms", sum as f64 / n as f64 / 1e3, min as f64 / 1e3);
    }
}
