//! Scenario files, topology generation and the AMI traffic profile.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ctp::CtpParams;
use crate::kernel::{RandomStream, TOPOLOGY_STREAM};
use crate::loadng::LoadngParams;
use crate::mac::MacParams;
use crate::radio::{Position, RadioParams};
use crate::rpl::RplParams;

/// How many client placements random-grid may redraw before giving up.
pub const MAX_RESAMPLES: usize = 1000;
/// Relay spacing along the distance-line axis, meters.
pub const RELAY_SPACING: f64 = 200.0;
/// Lateral jitter of non-relay clients on the distance line, meters.
const LINE_JITTER: f64 = 20.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("topology: {0}")]
    Topology(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Backend {
    #[serde(rename = "loadng")]
    Loadng,
    #[serde(rename = "loadng-ctp")]
    LoadngCtp,
    #[serde(rename = "rpl")]
    Rpl,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Loadng, Backend::LoadngCtp, Backend::Rpl];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Loadng => "loadng",
            Backend::LoadngCtp => "loadng-ctp",
            Backend::Rpl => "rpl",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown backend {s:?} (expected loadng, loadng-ctp or rpl)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    RandomGrid,
    DistanceLine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub backend: Backend,
    pub node_count: usize,
    pub topology: TopologyKind,
    pub grid_side: f64,
    /// Farthest client distance for distance-line, meters.
    pub concentrator_distance: Option<f64>,
    /// Seconds.
    pub duration: f64,
    /// Seconds excluded from PDR and delay.
    pub warmup: f64,
    pub seed: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            backend: Backend::Loadng,
            node_count: 20,
            topology: TopologyKind::RandomGrid,
            grid_side: 1000.0,
            concentrator_distance: None,
            duration: 28_800.0,
            warmup: 120.0,
            seed: 1,
        }
    }
}

/// All protocol knobs in one flat table; each backend takes what it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub rreq_jitter: f64,
    pub route_lifetime: f64,
    pub net_traversal_time: f64,
    pub discovery_buffer: usize,
    pub rreq_max_jitter: f64,
    pub hello_min_jitter: f64,
    pub hello_max_jitter: f64,
    pub rrep_required: bool,
    pub retrigger_interval: f64,
    pub tree_start: f64,
    pub dio_interval_min: f64,
    pub dio_interval_doublings: u32,
    pub dio_redundancy_constant: u32,
    pub dao_interval: f64,
    pub dis_interval: f64,
    pub join_buffer: usize,
    pub mode: String,
    pub rank_metric: String,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        let l = LoadngParams::default();
        let c = CtpParams::default();
        let r = RplParams::default();
        ProtocolParams {
            rreq_jitter: l.rreq_jitter_max,
            route_lifetime: l.route_lifetime,
            net_traversal_time: l.net_traversal_time,
            discovery_buffer: l.discovery_buffer,
            rreq_max_jitter: c.rreq_max_jitter,
            hello_min_jitter: c.hello_min_jitter,
            hello_max_jitter: c.hello_max_jitter,
            rrep_required: c.rrep_required,
            retrigger_interval: c.retrigger_interval,
            tree_start: c.tree_start,
            dio_interval_min: r.dio_interval_min,
            dio_interval_doublings: r.dio_interval_doublings,
            dio_redundancy_constant: r.dio_redundancy_constant,
            dao_interval: r.dao_interval,
            dis_interval: r.dis_interval,
            join_buffer: r.join_buffer,
            mode: r.mode,
            rank_metric: r.rank_metric,
        }
    }
}

impl ProtocolParams {
    pub fn loadng(&self) -> LoadngParams {
        LoadngParams {
            rreq_jitter_max: self.rreq_jitter,
            route_lifetime: self.route_lifetime,
            net_traversal_time: self.net_traversal_time,
            discovery_buffer: self.discovery_buffer,
        }
    }

    pub fn ctp(&self) -> CtpParams {
        CtpParams {
            net_traversal_time: self.net_traversal_time,
            rreq_max_jitter: self.rreq_max_jitter,
            hello_min_jitter: self.hello_min_jitter,
            hello_max_jitter: self.hello_max_jitter,
            rrep_required: self.rrep_required,
            retrigger_interval: self.retrigger_interval,
            tree_start: self.tree_start,
        }
    }

    pub fn rpl(&self) -> RplParams {
        RplParams {
            dio_interval_min: self.dio_interval_min,
            dio_interval_doublings: self.dio_interval_doublings,
            dio_redundancy_constant: self.dio_redundancy_constant,
            dao_interval: self.dao_interval,
            dis_interval: self.dis_interval,
            join_buffer: self.join_buffer,
            mode: self.mode.clone(),
            rank_metric: self.rank_metric.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.loadng().validate()?;
        self.ctp().validate()?;
        self.rpl().validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficProfile {
    pub enabled: bool,
    pub report_bytes: usize,
    /// Seconds.
    pub report_period: f64,
    pub upward_ack_bytes: usize,
    pub downward_ack_bytes: usize,
    pub config_bytes: usize,
    /// Seconds.
    pub config_period: f64,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        TrafficProfile {
            enabled: true,
            report_bytes: 512,
            report_period: 60.0,
            upward_ack_bytes: 16,
            downward_ack_bytes: 12,
            config_bytes: 61,
            config_period: 300.0,
        }
    }
}

impl TrafficProfile {
    pub fn validate(&self) -> Result<(), String> {
        let sizes = [self.report_bytes, self.upward_ack_bytes, self.downward_ack_bytes, self.config_bytes];
        if sizes.contains(&0) {
            return Err("traffic payload sizes must be >= 1 byte".into());
        }
        if !(self.report_period >= 1e-6) || !(self.config_period >= 1e-6) {
            return Err("traffic.report_period and traffic.config_period must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSpec {
    pub node: u16,
    /// Seconds.
    pub at: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NodeCount,
    Distance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
    /// Empty means the scenario's own backend.
    pub backends: Vec<Backend>,
    pub seeds: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { axis: None, values: Vec::new(), backends: Vec::new(), seeds: 10 }
    }
}

/// Everything needed for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub mac: MacParams,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub traffic: TrafficProfile,
    #[serde(default, rename = "failure", skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: ScenarioSection::default(),
            radio: RadioParams::default(),
            mac: MacParams::default(),
            protocol: ProtocolParams::default(),
            traffic: TrafficProfile::default(),
            failures: Vec::new(),
        }
    }
}

/// A scenario file: one base configuration plus an optional sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    scenario: ScenarioSection,
    #[serde(default)]
    radio: RadioParams,
    #[serde(default)]
    mac: MacParams,
    #[serde(default)]
    protocol: ProtocolParams,
    #[serde(default)]
    traffic: TrafficProfile,
    #[serde(default, rename = "failure")]
    failures: Vec<FailureSpec>,
    #[serde(default)]
    sweep: SweepSection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
    pub backends: Vec<Backend>,
    pub seeds: u64,
}

impl SweepSpec {
    pub fn single(base: ScenarioConfig, seeds: u64) -> Self {
        let backends = vec![base.scenario.backend];
        SweepSpec { base, axis: None, values: Vec::new(), backends, seeds }
    }

    pub fn parse(text: &str) -> Result<SweepSpec, ConfigError> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let base = ScenarioConfig {
            scenario: f.scenario,
            radio: f.radio,
            mac: f.mac,
            protocol: f.protocol,
            traffic: f.traffic,
            failures: f.failures,
        };
        let backends = if f.sweep.backends.is_empty() { vec![base.scenario.backend] } else { f.sweep.backends };
        let spec = SweepSpec { base, axis: f.sweep.axis, values: f.sweep.values, backends, seeds: f.sweep.seeds };
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<SweepSpec, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.backends.is_empty() {
            return Err(ConfigError::Invalid("sweep.backends must not be empty".into()));
        }
        if self.seeds == 0 {
            return Err(ConfigError::Invalid("sweep.seeds must be >= 1".into()));
        }
        if self.axis.is_some() && self.values.is_empty() {
            return Err(ConfigError::Invalid("sweep.values must not be empty when sweep.axis is set".into()));
        }
        if self.axis.is_none() && !self.values.is_empty() {
            return Err(ConfigError::Invalid("sweep.values given without sweep.axis".into()));
        }
        if self.axis == Some(SweepAxis::NodeCount) {
            if let Some(v) = self.values.iter().find(|v| v.fract() != 0.0 || **v < 0.0) {
                return Err(ConfigError::Invalid(format!("sweep.values for node_count must be whole numbers (got {v})")));
            }
        }
        for cell in self.cells() {
            cell.validate()?;
        }
        Ok(())
    }

    /// One configuration per (backend, axis value), seed left at the base.
    pub fn cells(&self) -> Vec<ScenarioConfig> {
        let mut backends = self.backends.clone();
        backends.sort();
        backends.dedup();
        let mut out = Vec::new();
        for b in backends {
            let mut values = self.values.clone();
            values.sort_by(f64::total_cmp);
            values.dedup();
            if self.axis.is_none() {
                let mut c = self.base.clone();
                c.scenario.backend = b;
                out.push(c);
            }
            for v in values {
                let mut c = self.base.clone();
                c.scenario.backend = b;
                match self.axis {
                    Some(SweepAxis::NodeCount) => c.scenario.node_count = v as usize,
                    Some(SweepAxis::Distance) => c.scenario.concentrator_distance = Some(v),
                    None => {}
                }
                out.push(c);
            }
        }
        out
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let s = &self.scenario;
        if s.node_count < 2 {
            return bad(format!("scenario.node_count must be >= 2 (got {})", s.node_count));
        }
        if s.node_count >= u16::MAX as usize {
            return bad(format!("scenario.node_count must be < {} (got {})", u16::MAX, s.node_count));
        }
        if !(s.grid_side > 0.0) || !s.grid_side.is_finite() {
            return bad(format!("scenario.grid_side must be > 0 (got {})", s.grid_side));
        }
        if !(s.duration > 0.0) || !s.duration.is_finite() {
            return bad(format!("scenario.duration must be > 0 (got {})", s.duration));
        }
        if !(s.warmup >= 0.0 && s.warmup < s.duration) {
            return bad(format!("scenario.warmup must be in [0, duration) (got {})", s.warmup));
        }
        if s.topology == TopologyKind::DistanceLine {
            let Some(d) = s.concentrator_distance else {
                return bad("scenario.concentrator_distance is required for distance-line".into());
            };
            if !(d > 0.0) || d > s.grid_side {
                return bad(format!("scenario.concentrator_distance must be in (0, grid_side] (got {d})"));
            }
            let needed = 2 + relay_count(d);
            if s.node_count < needed {
                return bad(format!(
                    "distance-line at {d} m needs node_count >= {needed} for {} m relay spacing",
                    RELAY_SPACING
                ));
            }
            if self.radio.range < RELAY_SPACING + LINE_JITTER {
                return bad(format!("distance-line needs radio.range >= {} m", RELAY_SPACING + LINE_JITTER));
            }
        }
        self.radio.validate().map_err(ConfigError::Invalid)?;
        self.mac.validate().map_err(ConfigError::Invalid)?;
        self.protocol.validate().map_err(ConfigError::Invalid)?;
        self.traffic.validate().map_err(ConfigError::Invalid)?;
        for f in &self.failures {
            if f.node as usize >= s.node_count || f.node == 0 {
                return bad(format!("failure.node must name a client in 1..{} (got {})", s.node_count, f.node));
            }
            if !(f.at >= 0.0) {
                return bad(format!("failure.at must be >= 0 (got {})", f.at));
            }
        }
        Ok(())
    }

    /// Short stable identifier of everything except the seed.
    pub fn cfg_id(&self) -> String {
        let mut c = self.clone();
        c.scenario.seed = 0;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

fn relay_count(d: f64) -> usize {
    // Relays at 200, 400, .. strictly below d.
    ((d / RELAY_SPACING).ceil() as usize).saturating_sub(1)
}

/// Node 0 is always the concentrator.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub positions: Vec<Position>,
}

impl Topology {
    pub fn concentrator(&self) -> usize {
        0
    }

    /// Hop distances from node `src` over links no longer than `range`.
    pub fn hop_distances(&self, src: usize, range: f64) -> Vec<Option<usize>> {
        let n = self.positions.len();
        let mut dist = vec![None; n];
        dist[src] = Some(0);
        let mut queue = std::collections::VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if dist[v].is_none() && self.positions[u].distance(&self.positions[v]) <= range {
                    dist[v] = Some(dist[u].unwrap() + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

pub fn generate_topology(cfg: &ScenarioConfig) -> Result<Topology, ConfigError> {
    let s = &cfg.scenario;
    let mut rng = RandomStream::new(s.seed, TOPOLOGY_STREAM);
    match s.topology {
        TopologyKind::RandomGrid => random_grid(s.node_count, s.grid_side, cfg.radio.range, &mut rng),
        TopologyKind::DistanceLine => {
            let d = s.concentrator_distance.ok_or_else(|| ConfigError::Invalid("concentrator_distance missing".into()))?;
            Ok(distance_line(s.node_count, d, s.grid_side, &mut rng))
        }
    }
}

fn random_grid(n: usize, side: f64, range: f64, rng: &mut RandomStream) -> Result<Topology, ConfigError> {
    let draw = |rng: &mut RandomStream| Position::new(rng.uniform(0.0, side), rng.uniform(0.0, side));
    let mut positions = vec![Position::new(side / 2.0, side / 2.0)];
    positions.extend((1..n).map(|_| draw(rng)));
    let mut topo = Topology { positions };
    let mut resamples = 0;
    loop {
        let dist = topo.hop_distances(0, range);
        let orphans: Vec<usize> = (1..n).filter(|&i| dist[i].is_none()).collect();
        if orphans.is_empty() {
            return Ok(topo);
        }
        for i in orphans {
            resamples += 1;
            if resamples > MAX_RESAMPLES {
                return Err(ConfigError::Topology(format!(
                    "no connected placement of {n} nodes in {side} m square with {range} m range after {MAX_RESAMPLES} resamples"
                )));
            }
            topo.positions[i] = draw(rng);
        }
    }
}

/// Concentrator at the left edge; relays every 200 m along the axis; one
/// client pinned at distance `d`, the rest spread over `(0, d]`.
fn distance_line(n: usize, d: f64, side: f64, rng: &mut RandomStream) -> Topology {
    let y = side / 2.0;
    let mut positions = vec![Position::new(0.0, y)];
    for k in 1..=relay_count(d) {
        positions.push(Position::new(k as f64 * RELAY_SPACING, y));
    }
    positions.push(Position::new(d, y));
    while positions.len() < n {
        let x = d * (1.0 - rng.unit());
        let dy = rng.uniform(-LINE_JITTER, LINE_JITTER);
        positions.push(Position::new(x, y + dy));
    }
    Topology { positions }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let spec = SweepSpec::parse("").unwrap();
        assert_eq!(spec.base, ScenarioConfig::default());
        assert_eq!(spec.seeds, 10);
        assert_eq!(spec.base.protocol.route_lifetime, 15.0);
        assert_eq!(spec.base.protocol.dio_interval_min, 2.0);
    }

    #[test]
    fn hello_jitter_rule_is_enforced_at_load() {
        let text = "[protocol]\nhello_min_jitter = 1.5\nrreq_max_jitter = 1.0\n";
        let err = SweepSpec::parse(text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("hello_min_jitter"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(SweepSpec::parse("[radio]\nrnage = 3\n"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn cfg_id_ignores_seed_only() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        b.scenario.seed = 99;
        assert_eq!(a.cfg_id(), b.cfg_id());
        b.scenario.node_count = 21;
        assert_ne!(a.cfg_id(), b.cfg_id());
    }

    #[test]
    fn random_grid_is_connected_and_deterministic() {
        let cfg = ScenarioConfig::default();
        let t1 = generate_topology(&cfg).unwrap();
        let t2 = generate_topology(&cfg).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.positions.len(), 20);
        assert!(t1.hop_distances(0, 250.0).iter().all(Option::is_some));
        for p in &t1.positions {
            assert!((0.0..=1000.0).contains(&p.x) && (0.0..=1000.0).contains(&p.y));
        }
    }

    #[test]
    fn impossible_grid_is_rejected() {
        let mut cfg = ScenarioConfig::default();
        cfg.scenario.grid_side = 1000.0;
        cfg.radio.range = 1.0;
        assert!(matches!(generate_topology(&cfg), Err(ConfigError::Topology(_))));
    }

    #[test]
    fn distance_line_shapes() {
        let mut cfg = ScenarioConfig::default();
        cfg.scenario.topology = TopologyKind::DistanceLine;
        cfg.scenario.concentrator_distance = Some(500.0);
        let t = generate_topology(&cfg).unwrap();
        let hops = t.hop_distances(0, 250.0);
        assert!(hops.iter().all(Option::is_some));
        let far = t
            .positions
            .iter()
            .map(|p| p.distance(&t.positions[0]))
            .fold(0.0, f64::max);
        assert!((far - 500.0).abs() < LINE_JITTER + 1e-9);
        assert!(hops.iter().flatten().max().copied().unwrap() >= 2);

        cfg.scenario.node_count = 2;
        cfg.scenario.concentrator_distance = Some(50.0);
        let t = generate_topology(&cfg).unwrap();
        assert_eq!(t.hop_distances(0, 250.0)[1], Some(1));

        cfg.scenario.concentrator_distance = Some(500.0);
        assert!(cfg.validate().is_err(), "two nodes cannot span 500 m");
    }
}
