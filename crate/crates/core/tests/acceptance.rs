//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use amisim::engine::Note;
use amisim::metrics::Summary;
use amisim::runner::{run_sweep, summarize, write_csv, SweepOutcome};
use amisim::scenario::{SweepAxis, TopologyKind};
use amisim::sim::Trace;
use amisim::{
    Address, Backend, CtpEngine, CtpParams, LoadngEngine, LoadngParams, MacParams, MsgKind, Position, RadioParams,
    RoutingEngine, RplEngine, RplParams, ScenarioConfig, SimTime, Simulation, SweepSpec,
};
use common::{bfs, chain, random_connected, star, unit_disk_adjacency};

const ROOT: Address = Address(0);
const GRID_WALL_LIMIT: Duration = Duration::from_secs(300);
const PDR_FLOOR: f64 = 0.99;
const LOADNG_PDR_GAP: f64 = 0.02;
const DELAY_RATIO: f64 = 2.5;
const CTP_VS_RPL_DELAY: f64 = 1.2;
const ORACLE_GRAPHS: u64 = 10;
const ORACLE_NODES: usize = 15;
const TICK_US: u64 = 1;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict { ok, detail: detail.into() }
}

fn desk_base() -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.scenario.topology = TopologyKind::RandomGrid;
    c.scenario.duration = 1800.0;
    c
}

fn desk_grid() -> SweepSpec {
    SweepSpec {
        base: desk_base(),
        axis: Some(SweepAxis::NodeCount),
        values: vec![20.0, 40.0, 60.0],
        backends: Backend::ALL.to_vec(),
        seeds: 10,
    }
}

fn distance_sweep() -> SweepSpec {
    let mut base = desk_base();
    base.scenario.topology = TopologyKind::DistanceLine;
    base.scenario.node_count = 20;
    base.scenario.concentrator_distance = Some(50.0);
    SweepSpec {
        base,
        axis: Some(SweepAxis::Distance),
        values: vec![50.0, 250.0, 500.0],
        backends: Backend::ALL.to_vec(),
        seeds: 10,
    }
}

fn cell<'a>(s: &'a [Summary], backend: Backend, nodes: usize, distance: Option<f64>) -> &'a Summary {
    s.iter()
        .find(|x| x.backend == backend.name() && x.node_count == nodes && x.distance == distance)
        .unwrap_or_else(|| panic!("missing cell {backend} n={nodes} d={distance:?}"))
}

fn mean(s: &Option<amisim::metrics::Stat>) -> f64 {
    s.as_ref().map_or(f64::NAN, |s| s.mean)
}

// --- 1 --------------------------------------------------------------------

fn grid_runtime(elapsed: Duration, grid: &SweepOutcome) -> Verdict {
    let runs = grid.reports.len() + grid.aborted.len();
    verdict(
        elapsed < GRID_WALL_LIMIT && runs == 90 && grid.aborted.is_empty(),
        format!("{runs} runs in {:.1} s (limit {} s), {} aborted", elapsed.as_secs_f64(), GRID_WALL_LIMIT.as_secs(), grid.aborted.len()),
    )
}

// --- 2 --------------------------------------------------------------------

fn pdr_ordering(s: &[Summary]) -> Verdict {
    let rpl = mean(&cell(s, Backend::Rpl, 60, None).pdr_up);
    let ctp = mean(&cell(s, Backend::LoadngCtp, 60, None).pdr_up);
    let ld60 = mean(&cell(s, Backend::Loadng, 60, None).pdr_up);
    let ld20 = mean(&cell(s, Backend::Loadng, 20, None).pdr_up);
    let ok = rpl >= PDR_FLOOR
        && ctp >= PDR_FLOOR
        && ld60 <= rpl - LOADNG_PDR_GAP
        && ld60 <= ctp - LOADNG_PDR_GAP
        && ld60 < ld20;
    verdict(ok, format!("upward @60: rpl {rpl:.4} ctp {ctp:.4} loadng {ld60:.4} (needs <= {:.4}); loadng @20 {ld20:.4}", rpl.min(ctp) - LOADNG_PDR_GAP))
}

// --- 3 --------------------------------------------------------------------

fn delay_ordering(s: &[Summary]) -> Verdict {
    let ld = mean(&cell(s, Backend::Loadng, 60, None).delay_up);
    let ctp = mean(&cell(s, Backend::LoadngCtp, 60, None).delay_up);
    let rpl = mean(&cell(s, Backend::Rpl, 60, None).delay_up);
    let ok = ld >= DELAY_RATIO * ctp && ld >= DELAY_RATIO * rpl && ctp <= CTP_VS_RPL_DELAY * rpl;
    verdict(
        ok,
        format!(
            "upward @60: loadng {:.1} ms ({:.2}x ctp, {:.2}x rpl, need {DELAY_RATIO}x); ctp/rpl {:.2} (need <= {CTP_VS_RPL_DELAY})",
            ld * 1e3,
            ld / ctp,
            ld / rpl,
            ctp / rpl
        ),
    )
}

// --- 4 --------------------------------------------------------------------

fn overhead_ordering(s: &[Summary]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [20, 40, 60] {
        let ctp = mean(&cell(s, Backend::LoadngCtp, n, None).overhead_bytes_per_sec);
        let ld = mean(&cell(s, Backend::Loadng, n, None).overhead_bytes_per_sec);
        let rpl = mean(&cell(s, Backend::Rpl, n, None).overhead_bytes_per_sec);
        ok &= ctp < ld && ctp < rpl;
        parts.push(format!("n={n}: ctp {ctp:.1} loadng {ld:.1} rpl {rpl:.1}"));
    }
    verdict(ok, format!("B/s {}", parts.join("; ")))
}

// --- 5 --------------------------------------------------------------------

fn distance_trend(out: &SweepOutcome) -> Verdict {
    let s = summarize(&out.reports);
    let mut ok = out.aborted.is_empty();
    let mut worst = f64::INFINITY;
    for b in [Backend::Rpl, Backend::LoadngCtp] {
        for d in [50.0, 250.0, 500.0] {
            let c = cell(&s, b, 20, Some(d));
            for p in [mean(&c.pdr_up), mean(&c.pdr_down)] {
                worst = worst.min(p);
                ok &= p >= PDR_FLOOR;
            }
        }
    }
    let near = cell(&s, Backend::Loadng, 20, Some(50.0));
    let far = cell(&s, Backend::Loadng, 20, Some(500.0));
    let (nu, fu) = (mean(&near.pdr_up), mean(&far.pdr_up));
    let (nd, fd) = (mean(&near.pdr_down), mean(&far.pdr_down));
    ok &= fu < nu && fd < nd;
    verdict(
        ok,
        format!("rpl/ctp min pdr {worst:.4}; loadng up {nu:.4} -> {fu:.4}, down {nd:.4} -> {fd:.4} (50 m -> 500 m)"),
    )
}

// --- 6 --------------------------------------------------------------------

fn lossless_sim<E: RoutingEngine>(pos: &[Position], engines: Vec<E>, seed: u64) -> Simulation<E> {
    Simulation::new(pos, RadioParams::lossless(), MacParams::default(), seed, engines, ROOT)
}

fn oracle_loadng(seed: u64, pos: &[Position], adj: &[Vec<usize>]) -> Result<usize, String> {
    let n = pos.len();
    let engines = (0..n).map(|i| LoadngEngine::new(Address(i as u16), LoadngParams::default())).collect();
    let mut sim = lossless_sim(pos, engines, seed);
    let mut checked = 0;
    let mut t = 1.0;
    for src in [0, n - 1] {
        let dist = bfs(adj, src);
        for dst in (0..n).filter(|&d| d != src) {
            let (s, d) = (Address(src as u16), Address(dst as u16));
            sim.inject(SimTime::from_secs_f64(t), s, d, 16).map_err(|e| e.to_string())?;
            sim.run_until(SimTime::from_secs_f64(t + 10.0)).map_err(|e| e.to_string())?;
            let got = sim.engine(s).core().routes().get_valid(d, sim.now()).map(|r| r.metric as u32);
            if got != dist[dst] {
                return Err(format!("graph {seed}: {src}->{dst} metric {got:?}, bfs {:?}", dist[dst]));
            }
            checked += 1;
            t += 11.0;
        }
    }
    Ok(checked)
}

fn oracle_ctp(seed: u64, pos: &[Position], adj: &[Vec<usize>]) -> Result<(), String> {
    let n = pos.len();
    let engines =
        (0..n).map(|i| CtpEngine::new(Address(i as u16), ROOT, LoadngParams::default(), CtpParams::default())).collect();
    let mut sim = lossless_sim(pos, engines, seed);
    sim.run_until(SimTime::from_secs_f64(60.0)).map_err(|e| e.to_string())?;
    // SYM edges as classified by the receivers during the build.
    let sym: Vec<Vec<usize>> = (0..n)
        .map(|u| {
            (0..n)
                .filter(|&v| {
                    v != u
                        && sim.engine(Address(v as u16)).state().status(Address(u as u16))
                            == Some(amisim::loadng::LinkStatus::Sym)
                })
                .collect()
        })
        .collect();
    let sym_dist = bfs(&sym, 0);
    let udg_dist = bfs(adj, 0);
    if sym_dist != udg_dist {
        return Err(format!("graph {seed}: SYM subgraph differs from the lossless unit-disk graph"));
    }
    for v in 1..n {
        let up = sim.engine(Address(v as u16)).upward().ok_or_else(|| format!("graph {seed}: node {v} has no tree tuple"))?;
        if Some(up.metric as u32) != sym_dist[v] {
            return Err(format!("graph {seed}: node {v} metric {}, bfs {:?}", up.metric, sym_dist[v]));
        }
        let mut at = v;
        let mut seen = vec![false; n];
        while at != 0 {
            if seen[at] {
                return Err(format!("graph {seed}: parent walk from {v} cycles"));
            }
            seen[at] = true;
            at = sim
                .engine(Address(at as u16))
                .upward()
                .ok_or_else(|| format!("graph {seed}: walk from {v} stops at {at}"))?
                .next
                .index();
        }
    }
    Ok(())
}

fn oracle_rpl(seed: u64, pos: &[Position], adj: &[Vec<usize>]) -> Result<(), String> {
    let n = pos.len();
    let engines = (0..n).map(|i| RplEngine::new(Address(i as u16), ROOT, RplParams::default())).collect();
    let mut sim = lossless_sim(pos, engines, seed);
    sim.run_until(SimTime::from_secs_f64(300.0)).map_err(|e| e.to_string())?;
    let dist = bfs(adj, 0);
    for v in 0..n {
        let rank = sim.engine(Address(v as u16)).rank() as u32;
        if Some(rank) != dist[v].map(|d| d + 1) {
            return Err(format!("graph {seed}: node {v} rank {rank}, bfs+1 {:?}", dist[v].map(|d| d + 1)));
        }
    }
    Ok(())
}

fn oracle_equivalence() -> Verdict {
    let range = RadioParams::lossless().range;
    let mut queries = 0;
    for g in 0..ORACLE_GRAPHS {
        let seed = 100 + g;
        let pos = random_connected(seed, ORACLE_NODES, 600.0, range);
        let adj = unit_disk_adjacency(&pos, range);
        let res = oracle_loadng(seed, &pos, &adj)
            .and_then(|q| {
                queries += q;
                oracle_ctp(seed, &pos, &adj)
            })
            .and_then(|_| oracle_rpl(seed, &pos, &adj));
        if let Err(e) = res {
            return verdict(false, e);
        }
    }
    verdict(true, format!("{ORACLE_GRAPHS} graphs x {ORACLE_NODES} nodes: {queries} LOADng metrics, CTP metrics and walks, RPL ranks all equal BFS"))
}

// --- 7 --------------------------------------------------------------------

fn ctp_build_trace(pos: &[Position], params: CtpParams) -> (Trace, Vec<CtpEngineView>) {
    let n = pos.len();
    let engines = (0..n).map(|i| CtpEngine::new(Address(i as u16), ROOT, LoadngParams::default(), params.clone())).collect();
    let mut sim = lossless_sim(pos, engines, 3);
    sim.enable_trace();
    sim.run_until(SimTime::from_secs_f64(60.0)).expect("run");
    let views = (0..n)
        .map(|i| {
            let e = sim.engine(Address(i as u16));
            CtpEngineView { downward: e.core().routes().iter().filter(|t| t.is_persistent() && t.dest != ROOT).count() }
        })
        .collect();
    (sim.trace().cloned().expect("trace on"), views)
}

struct CtpEngineView {
    downward: usize,
}

fn count(trace: &Trace, kind: MsgKind) -> usize {
    trace.tx.iter().filter(|t| t.kind() == Some(kind)).count()
}

fn ctp_message_counts() -> Verdict {
    let mut parts = Vec::new();
    for (name, layout) in [("chain", chain as fn(usize) -> Vec<Position>), ("star", star)] {
        for n in [3, 5, 10] {
            let (trace, views) = ctp_build_trace(&layout(n), CtpParams::default());
            let triggers = count(&trace, MsgKind::RreqTrigger);
            let hellos = count(&trace, MsgKind::Hello);
            let builds = count(&trace, MsgKind::RreqBuild);
            let paths = trace.notes.iter().filter(|r| r.note == Note::RrepPathStarted).count();
            let ok = triggers == n && hellos <= n && builds == n && paths == n - 1 && views[0].downward == n - 1;
            if !ok {
                return verdict(
                    false,
                    format!("{name} n={n}: trigger {triggers}, hello {hellos}, build {builds}, rrep paths {paths}, root downward {}", views[0].downward),
                );
            }
            parts.push(format!("{name}{n}"));
        }
    }
    verdict(true, format!("exact counts on {}", parts.join(" ")))
}

// --- 8 --------------------------------------------------------------------

fn timer_laws() -> Verdict {
    // Build fires exactly 2 x NET_TRAVERSAL_TIME after the trigger.
    for (ntt, start) in [(10.0, 0.0), (3.5, 7.25)] {
        let mut p = CtpParams::default();
        p.net_traversal_time = ntt;
        p.tree_start = start;
        let (trace, _) = ctp_build_trace(&chain(5), p);
        let at = |note: Note| trace.notes.iter().find(|r| r.note == note).map(|r| r.at.as_micros());
        let (Some(t0), Some(t1)) = (at(Note::TriggerOriginated), at(Note::BuildOriginated)) else {
            return verdict(false, format!("ntt {ntt}: trigger or build missing"));
        };
        let want = SimTime::from_secs_f64(2.0 * ntt).as_micros();
        if (t1 - t0).abs_diff(want) > TICK_US || t0 != SimTime::from_secs_f64(start).as_micros() {
            return verdict(false, format!("ntt {ntt}: build {} us after trigger at {t0}", t1 - t0));
        }
    }

    // hello_min_jitter must exceed 2 x rreq_max_jitter.
    let cfg = |hello_min: f64| {
        ScenarioConfig::parse(&format!(
            "[protocol]\nrreq_max_jitter = 1.0\nhello_min_jitter = {hello_min:?}\nhello_max_jitter = 5.0\n"
        ))
    };
    if cfg(2.0).is_ok() || cfg(1.5).is_ok() || cfg(2.001).is_err() {
        return verdict(false, "hello jitter constraint not enforced by the loader");
    }

    // Isolated root: first three DIOs inside trickle intervals of 2, 4 and 8 s.
    let mut sim = Simulation::new(
        &[Position::new(0.0, 0.0)],
        RadioParams::default(),
        MacParams::default(),
        9,
        vec![RplEngine::new(ROOT, ROOT, RplParams::default())],
        ROOT,
    );
    sim.enable_trace();
    sim.run_until(SimTime::from_secs_f64(20.0)).expect("run");
    let dios: Vec<f64> =
        sim.trace().unwrap().notes.iter().filter(|r| r.note == Note::DioSent).map(|r| r.at.as_secs_f64()).collect();
    let windows = [(1.0, 2.0), (3.0, 6.0), (10.0, 14.0)];
    if dios.len() < 3 || !dios.iter().zip(windows).all(|(&t, (lo, hi))| t >= lo && t < hi) {
        return verdict(false, format!("root DIOs at {dios:?}, expected within {windows:?}"));
    }
    verdict(true, format!("build +2 NTT exact; loader rejects hello_min <= 2 rreq_max; DIOs at {:.3?} s", &dios[..3]))
}

// --- 9 --------------------------------------------------------------------

fn determinism(grid: &SweepOutcome) -> Verdict {
    let mut spec = desk_grid();
    spec.values = vec![20.0, 40.0];
    spec.seeds = 2;
    let csv = || {
        let out = run_sweep(&spec).expect("valid sweep");
        let mut buf = Vec::new();
        write_csv(&mut buf, &out.reports).expect("csv");
        buf
    };
    let (a, b) = (csv(), csv());
    let conserved = grid.reports.iter().all(|r| r.fates_up.conserved() && r.fates_down.conserved());
    verdict(
        a == b && !a.is_empty() && conserved && grid.aborted.is_empty(),
        format!("{} CSV bytes identical: {}; conservation on all {} grid runs: {conserved}", a.len(), a == b, grid.reports.len()),
    )
}

// --- 10 -------------------------------------------------------------------

fn silent_run(backend: Backend) -> f64 {
    let mut cfg = desk_base();
    cfg.scenario.backend = backend;
    cfg.traffic.enabled = false;
    let outcome = amisim::runner::run_outcome(&cfg).expect("run");
    let report = amisim::runner::report(&cfg, &outcome);
    report.overhead_bytes_per_sec
}

fn reactive_proactive() -> Verdict {
    let loadng = silent_run(Backend::Loadng);
    let rpl = silent_run(Backend::Rpl);
    let ctp = silent_run(Backend::LoadngCtp);

    // CTP control traffic must stay inside the build window.
    let p = CtpParams::default();
    let mut cfg = desk_base();
    cfg.scenario.backend = Backend::LoadngCtp;
    cfg.traffic.enabled = false;
    let topo = amisim::scenario::generate_topology(&cfg).expect("topology");
    let n = topo.positions.len();
    let engines = (0..n).map(|i| CtpEngine::new(Address(i as u16), ROOT, LoadngParams::default(), p.clone())).collect();
    let mut sim = Simulation::new(&topo.positions, cfg.radio.clone(), cfg.mac.clone(), cfg.scenario.seed, engines, ROOT);
    sim.enable_trace();
    sim.run_until(SimTime::from_secs_f64(cfg.scenario.duration)).expect("run");
    let window_end = SimTime::from_secs_f64(p.tree_start + 3.0 * p.net_traversal_time);
    let trace = sim.trace().unwrap();
    let control: Vec<SimTime> = trace.tx.iter().filter(|t| t.msg.is_some()).map(|t| t.at).collect();
    let last = control.iter().max().copied().unwrap_or(SimTime::ZERO);
    let ok = loadng == 0.0 && rpl > 0.0 && ctp > 0.0 && !control.is_empty() && last <= window_end;
    verdict(
        ok,
        format!(
            "no traffic: loadng {loadng} B/s, rpl {rpl:.2} B/s, ctp {ctp:.2} B/s with last control frame at {:.2} s (window ends {:.0} s)",
            last.as_secs_f64(),
            window_end.as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let grid = run_sweep(&desk_grid()).expect("valid grid");
    let elapsed = started.elapsed();
    let summaries = summarize(&grid.reports);
    let distance = run_sweep(&distance_sweep()).expect("valid sweep");

    let results = [
        ("1 desk grid completes in time", grid_runtime(elapsed, &grid)),
        ("2 PDR ordering", pdr_ordering(&summaries)),
        ("3 delay ordering", delay_ordering(&summaries)),
        ("4 overhead ordering", overhead_ordering(&summaries)),
        ("5 distance sweep", distance_trend(&distance)),
        ("6 oracle equivalence", oracle_equivalence()),
        ("7 CTP message counts", ctp_message_counts()),
        ("8 timer laws", timer_laws()),
        ("9 determinism and conservation", determinism(&grid)),
        ("10 reactive/proactive signatures", reactive_proactive()),
    ];
    let mut failed = 0;
    for (name, v) in &results {
        println!("{} criterion {name}: {}", if v.ok { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.ok);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
