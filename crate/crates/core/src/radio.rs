//! Unit-disk radio with distance-dependent loss and overlap collisions.

use serde::{Deserialize, Serialize};

use crate::kernel::SimDuration;
use crate::messages::Address;

/// Link-layer framing bytes added to every frame.
pub const LINK_HEADER_BYTES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    /// Communication range in meters.
    pub range: f64,
    /// Reception probability at exactly `range`.
    pub p_edge: f64,
    /// Bits per second.
    pub bitrate: u64,
    /// When false the medium is contention-free: no carrier sense, no
    /// collisions, no half-duplex loss.
    pub collisions: bool,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams { range: 250.0, p_edge: 0.8, bitrate: 250_000, collisions: true }
    }
}

impl RadioParams {
    /// An ideal channel: lossless links and no contention.
    pub fn lossless() -> Self {
        RadioParams { p_edge: 1.0, collisions: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.range > 0.0) {
            return Err(format!("radio.range must be > 0 (got {})", self.range));
        }
        if !(self.p_edge > 0.0 && self.p_edge <= 1.0) {
            return Err(format!("radio.p_edge must be in (0, 1] (got {})", self.p_edge));
        }
        if self.bitrate == 0 {
            return Err("radio.bitrate must be > 0".into());
        }
        Ok(())
    }

    /// Time on air for a frame carrying `payload_bytes`, link header included.
    pub fn airtime(&self, payload_bytes: usize) -> SimDuration {
        let bits = ((payload_bytes + LINK_HEADER_BYTES) * 8) as u64;
        SimDuration::from_micros((bits * 1_000_000).div_ceil(self.bitrate))
    }
}

/// `1 - (1 - p_edge) * (d / range)^2` inside the range, zero outside.
pub fn reception_probability(d: f64, p: &RadioParams) -> f64 {
    debug_assert!(d >= 0.0);
    if d > p.range {
        return 0.0;
    }
    let r = d / p.range;
    1.0 - (1.0 - p.p_edge) * r * r
}

#[derive(Clone, Debug)]
pub struct Neighbor {
    pub addr: Address,
    pub distance: f64,
    pub p_rx: f64,
}

#[derive(Clone, Copy, Debug)]
struct Reception {
    tx: u64,
    corrupted: bool,
}

/// Shared medium state: who is in range of whom, and which receptions are
/// currently in progress at every node.
#[derive(Debug)]
pub struct Channel {
    params: RadioParams,
    neighbors: Vec<Vec<Neighbor>>,
    receiving: Vec<Vec<Reception>>,
    transmitting: Vec<Option<u64>>,
    alive: Vec<bool>,
    collisions: u64,
}

/// Outcome of one transmission at one in-range node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceptionOutcome {
    pub receiver: Address,
    /// No overlap with another frame and the receiver was listening.
    pub clean: bool,
    pub p_rx: f64,
}

impl Channel {
    pub fn new(positions: &[Position], params: RadioParams) -> Self {
        let n = positions.len();
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .filter_map(|j| {
                        let d = positions[i].distance(&positions[j]);
                        (d <= params.range).then(|| Neighbor {
                            addr: Address(j as u16),
                            distance: d,
                            p_rx: reception_probability(d, &params),
                        })
                    })
                    .collect()
            })
            .collect();
        Channel {
            params,
            neighbors,
            receiving: vec![Vec::new(); n],
            transmitting: vec![None; n],
            alive: vec![true; n],
            collisions: 0,
        }
    }

    pub fn params(&self) -> &RadioParams {
        &self.params
    }

    pub fn neighbors(&self, node: Address) -> &[Neighbor] {
        &self.neighbors[node.index()]
    }

    pub fn link_probability(&self, from: Address, to: Address) -> f64 {
        self.neighbors[from.index()]
            .iter()
            .find(|n| n.addr == to)
            .map_or(0.0, |n| n.p_rx)
    }

    pub fn set_alive(&mut self, node: Address, alive: bool) {
        self.alive[node.index()] = alive;
        if !alive {
            for r in &mut self.receiving[node.index()] {
                r.corrupted = true;
            }
        }
    }

    pub fn is_alive(&self, node: Address) -> bool {
        self.alive[node.index()]
    }

    /// Carrier sense at `node`.
    pub fn is_busy(&self, node: Address) -> bool {
        if !self.params.collisions {
            return false;
        }
        let i = node.index();
        self.transmitting[i].is_some() || !self.receiving[i].is_empty()
    }

    /// Number of receptions destroyed by overlapping frames so far.
    pub fn collision_count(&self) -> u64 {
        self.collisions
    }

    pub fn begin_transmission(&mut self, tx: u64, sender: Address) {
        let s = sender.index();
        self.transmitting[s] = Some(tx);
        if !self.params.collisions {
            return;
        }
        for r in &mut self.receiving[s] {
            if !r.corrupted {
                r.corrupted = true;
                self.collisions += 1;
            }
        }
        for k in 0..self.neighbors[s].len() {
            let j = self.neighbors[s][k].addr.index();
            let mut corrupted = !self.alive[j] || self.transmitting[j].is_some();
            if !self.receiving[j].is_empty() {
                for r in &mut self.receiving[j] {
                    if !r.corrupted {
                        r.corrupted = true;
                        self.collisions += 1;
                    }
                }
                corrupted = true;
            }
            if corrupted {
                self.collisions += 1;
            }
            self.receiving[j].push(Reception { tx, corrupted });
        }
    }

    /// Ends transmission `tx` and reports, per in-range node, whether the
    /// frame arrived intact. Loss draws are left to the caller.
    pub fn end_transmission(&mut self, tx: u64, sender: Address) -> Vec<ReceptionOutcome> {
        let s = sender.index();
        debug_assert_eq!(self.transmitting[s], Some(tx));
        self.transmitting[s] = None;
        let mut out = Vec::with_capacity(self.neighbors[s].len());
        for nb in &self.neighbors[s] {
            let j = nb.addr.index();
            let clean = if self.params.collisions {
                let pos = self.receiving[j].iter().position(|r| r.tx == tx);
                match pos {
                    Some(p) => !self.receiving[j].swap_remove(p).corrupted,
                    None => false,
                }
            } else {
                true
            };
            out.push(ReceptionOutcome {
                receiver: nb.addr,
                clean: clean && self.alive[j],
                p_rx: nb.p_rx,
            });
        }
        out
    }
}
