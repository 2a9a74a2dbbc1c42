//! Application data packets as carried by the routing backends.

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;
use crate::messages::Address;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PacketId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Client toward the concentrator.
    Upward,
    /// Concentrator toward a client.
    Downward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AppKind {
    Report,
    UpwardAck,
    DownwardAck,
    Config,
    /// Injected directly by a test or script.
    Probe,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataPacket {
    pub id: PacketId,
    pub src: Address,
    pub dst: Address,
    pub direction: Direction,
    pub kind: AppKind,
    pub app_bytes: usize,
    pub created_at: SimTime,
    /// Remaining explicit hops, for source-routed downward traffic.
    pub source_route: Option<Vec<Address>>,
    /// Hops travelled so far.
    pub hops: u8,
}

/// Packets that travel further than this are caught in a routing loop and
/// dropped as unroutable.
pub const MAX_HOPS: u8 = 64;
