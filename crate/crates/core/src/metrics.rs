//! Packet accounting and the three headline metrics: delivery ratio,
//! end-to-end delay and routing overhead in bytes per second.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::kernel::{SimDuration, SimTime};
use crate::messages::{Address, MsgKind};
use crate::packet::{AppKind, DataPacket, Direction, PacketId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fate {
    Delivered,
    MacDrop,
    NoRoute,
    DiscoveryTimeout,
    BufferOverflow,
    InFlightAtEnd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PacketRecord {
    pub id: PacketId,
    pub source: Address,
    pub destination: Address,
    pub direction: Direction,
    pub kind: AppKind,
    pub created_at: SimTime,
    pub delivered_at: Option<SimTime>,
    pub fate: Option<Fate>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FateCounts {
    pub created: u64,
    pub delivered: u64,
    pub mac_drop: u64,
    pub no_route: u64,
    pub discovery_timeout: u64,
    pub buffer_overflow: u64,
    pub in_flight: u64,
}

impl FateCounts {
    pub fn add(&mut self, fate: Option<Fate>) {
        self.created += 1;
        match fate {
            Some(Fate::Delivered) => self.delivered += 1,
            Some(Fate::MacDrop) => self.mac_drop += 1,
            Some(Fate::NoRoute) => self.no_route += 1,
            Some(Fate::DiscoveryTimeout) => self.discovery_timeout += 1,
            Some(Fate::BufferOverflow) => self.buffer_overflow += 1,
            Some(Fate::InFlightAtEnd) | None => self.in_flight += 1,
        }
    }

    pub fn dropped(&self) -> u64 {
        self.mac_drop + self.no_route + self.discovery_timeout + self.buffer_overflow
    }

    /// `created == delivered + drops + in_flight`.
    pub fn conserved(&self) -> bool {
        self.created == self.delivered + self.dropped() + self.in_flight
    }
}

/// Records every application packet and every routing-control transmission
/// of one run.
#[derive(Debug, Default)]
pub struct MetricsCollector {
    records: Vec<PacketRecord>,
    control_bytes: u64,
    control_tx: BTreeMap<MsgKind, u64>,
    fate_violations: u64,
}

impl MetricsCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(
        &mut self,
        source: Address,
        destination: Address,
        direction: Direction,
        kind: AppKind,
        app_bytes: usize,
        now: SimTime,
    ) -> DataPacket {
        let id = PacketId(self.records.len() as u64);
        self.records.push(PacketRecord {
            id,
            source,
            destination,
            direction,
            kind,
            created_at: now,
            delivered_at: None,
            fate: None,
        });
        DataPacket {
            id,
            src: source,
            dst: destination,
            direction,
            kind,
            app_bytes,
            created_at: now,
            source_route: None,
            hops: 0,
        }
    }

    fn settle(&mut self, id: PacketId, fate: Fate, at: SimTime) {
        let rec = &mut self.records[id.0 as usize];
        if rec.fate.is_some() {
            self.fate_violations += 1;
            return;
        }
        rec.fate = Some(fate);
        if fate == Fate::Delivered {
            rec.delivered_at = Some(at);
        }
    }

    pub fn deliver(&mut self, id: PacketId, at: SimTime) {
        self.settle(id, Fate::Delivered, at);
    }

    pub fn drop(&mut self, id: PacketId, fate: Fate, at: SimTime) {
        debug_assert_ne!(fate, Fate::Delivered);
        self.settle(id, fate, at);
    }

    /// One control frame transmission (retransmissions count again).
    pub fn control_tx(&mut self, kind: MsgKind, frame_bytes: usize) {
        self.control_bytes += frame_bytes as u64;
        *self.control_tx.entry(kind).or_default() += 1;
    }

    pub fn control_bytes(&self) -> u64 {
        self.control_bytes
    }

    pub fn control_tx_counts(&self) -> &BTreeMap<MsgKind, u64> {
        &self.control_tx
    }

    pub fn records(&self) -> &[PacketRecord] {
        &self.records
    }

    /// Packets settled twice; must stay zero.
    pub fn fate_violations(&self) -> u64 {
        self.fate_violations
    }

    /// Mark everything unsettled as in flight.
    pub fn finish(&mut self) {
        for r in &mut self.records {
            if r.fate.is_none() {
                r.fate = Some(Fate::InFlightAtEnd);
            }
        }
    }

    pub fn fate_counts(&self, direction: Direction, after: SimTime) -> FateCounts {
        let mut c = FateCounts::default();
        for r in self.records.iter().filter(|r| r.direction == direction && r.created_at >= after) {
            c.add(r.fate);
        }
        c
    }
}

/// Delivered ÷ created for `direction`; `None` when nothing was created.
pub fn pdr(records: &[PacketRecord], direction: Direction) -> Option<f64> {
    let (created, delivered) = records
        .iter()
        .filter(|r| r.direction == direction)
        .fold((0u64, 0u64), |(c, d), r| (c + 1, d + u64::from(r.fate == Some(Fate::Delivered))));
    (created > 0).then(|| delivered as f64 / created as f64)
}

/// Mean creation-to-delivery delay in seconds over delivered packets.
pub fn avg_delay(records: &[PacketRecord], direction: Direction) -> Option<f64> {
    let delays: Vec<u64> = records
        .iter()
        .filter(|r| r.direction == direction)
        .filter_map(|r| r.delivered_at.map(|d| (d - r.created_at).as_micros()))
        .collect();
    if delays.is_empty() {
        return None;
    }
    let total: u64 = delays.iter().sum();
    Some(total as f64 / delays.len() as f64 / 1e6)
}

pub fn overhead_rate(control_bytes: u64, duration: SimDuration) -> f64 {
    assert!(duration > SimDuration::ZERO, "overhead_rate needs a positive duration");
    control_bytes as f64 / duration.as_secs_f64()
}

/// Per-run result row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub cfg_id: String,
    pub backend: String,
    pub node_count: usize,
    pub distance: Option<f64>,
    pub seed: u64,
    pub pdr_up: Option<f64>,
    pub pdr_down: Option<f64>,
    /// Seconds.
    pub delay_up: Option<f64>,
    pub delay_down: Option<f64>,
    pub overhead_bytes_per_sec: f64,
    pub fates_up: FateCounts,
    pub fates_down: FateCounts,
    pub warmup_secs: f64,
    pub duration_secs: f64,
    pub control_bytes: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty report list")]
    Empty,
    #[error("reports come from different configurations ({0} vs {1})")]
    MixedConfigs(String, String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
    pub n: usize,
}

impl Stat {
    /// Mean and sample standard deviation of the present values.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Stat> {
        let mut v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        // Sorted, shifted summation: order-independent, exact for equal values.
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let base = v[0];
        let mean = base + v.iter().map(|x| x - base).sum::<f64>() / n as f64;
        let stddev = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, stddev, n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub cfg_id: String,
    pub backend: String,
    pub node_count: usize,
    pub distance: Option<f64>,
    pub runs: usize,
    pub pdr_up: Option<Stat>,
    pub pdr_down: Option<Stat>,
    pub delay_up: Option<Stat>,
    pub delay_down: Option<Stat>,
    pub overhead_bytes_per_sec: Option<Stat>,
}

/// Mean ± sample stddev per metric across runs of one configuration.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Summary, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty)?;
    if let Some(other) = reports.iter().find(|r| r.cfg_id != first.cfg_id) {
        return Err(MetricsError::MixedConfigs(first.cfg_id.clone(), other.cfg_id.clone()));
    }
    Ok(Summary {
        cfg_id: first.cfg_id.clone(),
        backend: first.backend.clone(),
        node_count: first.node_count,
        distance: first.distance,
        runs: reports.len(),
        pdr_up: Stat::of(reports.iter().map(|r| r.pdr_up)),
        pdr_down: Stat::of(reports.iter().map(|r| r.pdr_down)),
        delay_up: Stat::of(reports.iter().map(|r| r.delay_up)),
        delay_down: Stat::of(reports.iter().map(|r| r.delay_down)),
        overhead_bytes_per_sec: Stat::of(reports.iter().map(|r| Some(r.overhead_bytes_per_sec))),
    })
}
