//! Routing control messages shared by the three backends, with the byte
//! sizes used for airtime and overhead accounting.

use std::fmt;

use serde::{Deserialize, Serialize};

/// 16-bit node identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub u16);

impl Address {
    pub const BROADCAST: Address = Address(u16::MAX);

    pub fn is_broadcast(self) -> bool {
        self == Self::BROADCAST
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_broadcast() {
            f.write_str("*")
        } else {
            write!(f, "n{}", self.0)
        }
    }
}

/// Wrapping 16-bit sequence number with circular comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct SeqNum(pub u16);

impl SeqNum {
    pub fn next(self) -> SeqNum {
        SeqNum(self.0.wrapping_add(1))
    }

    /// `self` is newer than `other` iff `0 < (self - other) mod 2^16 < 2^15`.
    pub fn newer_than(self, other: SeqNum) -> bool {
        let diff = self.0.wrapping_sub(other.0);
        diff != 0 && diff < 0x8000
    }
}

pub fn seq_newer(a: SeqNum, b: SeqNum) -> bool {
    a.newer_than(b)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct RreqFlags {
    pub trigger: bool,
    pub build: bool,
    pub rrep_required: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rreq {
    pub originator: Address,
    pub destination: Address,
    pub seq: SeqNum,
    pub hop_count: u8,
    pub flags: RreqFlags,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rrep {
    pub originator: Address,
    pub destination: Address,
    pub seq: SeqNum,
    pub hop_count: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RrepAck {
    pub originator: Address,
    pub destination: Address,
    pub seq: SeqNum,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rerr {
    pub originator: Address,
    /// Source of the data packet that hit the broken link.
    pub destination: Address,
    pub unreachable: Address,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hello {
    pub originator: Address,
    pub neighbors: Vec<Address>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dio {
    pub dodag_id: Address,
    pub rank: u16,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dao {
    pub originator: Address,
    pub parent: Address,
    pub seq: SeqNum,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RouteMsg {
    Rreq(Rreq),
    Rrep(Rrep),
    RrepAck(RrepAck),
    Rerr(Rerr),
    Hello(Hello),
    Dio(Dio),
    Dis,
    Dao(Dao),
}

/// Discriminant of [`RouteMsg`], used for counting and tracing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MsgKind {
    Rreq,
    RreqTrigger,
    RreqBuild,
    Rrep,
    RrepAck,
    Rerr,
    Hello,
    Dio,
    Dis,
    Dao,
}

/// Declared per-variant sizes in bytes, excluding the link header.
pub mod sizes {
    pub const RREQ: usize = 24;
    pub const RREP: usize = 24;
    pub const RREP_ACK: usize = 12;
    pub const RERR: usize = 20;
    pub const HELLO_BASE: usize = 12;
    pub const HELLO_PER_NEIGHBOR: usize = 2;
    pub const DIO: usize = 36;
    pub const DIS: usize = 8;
    pub const DAO: usize = 28;
}

impl RouteMsg {
    pub fn kind(&self) -> MsgKind {
        match self {
            RouteMsg::Rreq(r) if r.flags.trigger => MsgKind::RreqTrigger,
            RouteMsg::Rreq(r) if r.flags.build => MsgKind::RreqBuild,
            RouteMsg::Rreq(_) => MsgKind::Rreq,
            RouteMsg::Rrep(_) => MsgKind::Rrep,
            RouteMsg::RrepAck(_) => MsgKind::RrepAck,
            RouteMsg::Rerr(_) => MsgKind::Rerr,
            RouteMsg::Hello(_) => MsgKind::Hello,
            RouteMsg::Dio(_) => MsgKind::Dio,
            RouteMsg::Dis => MsgKind::Dis,
            RouteMsg::Dao(_) => MsgKind::Dao,
        }
    }

    pub fn encoded_size(&self) -> usize {
        match self {
            RouteMsg::Rreq(_) => sizes::RREQ,
            RouteMsg::Rrep(_) => sizes::RREP,
            RouteMsg::RrepAck(_) => sizes::RREP_ACK,
            RouteMsg::Rerr(_) => sizes::RERR,
            RouteMsg::Hello(h) => sizes::HELLO_BASE + sizes::HELLO_PER_NEIGHBOR * h.neighbors.len(),
            RouteMsg::Dio(_) => sizes::DIO,
            RouteMsg::Dis => sizes::DIS,
            RouteMsg::Dao(_) => sizes::DAO,
        }
    }
}

pub fn encoded_size(m: &RouteMsg) -> usize {
    m.encoded_size()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rreq() -> RouteMsg {
        RouteMsg::Rreq(Rreq {
            originator: Address(1),
            destination: Address(2),
            seq: SeqNum(1),
            hop_count: 0,
            flags: RreqFlags::default(),
        })
    }

    #[test]
    fn declared_sizes() {
        assert_eq!(encoded_size(&rreq()), 24);
        assert_eq!(encoded_size(&RouteMsg::Dio(Dio { dodag_id: Address(0), rank: 1 })), 36);
        let hello = RouteMsg::Hello(Hello {
            originator: Address(0),
            neighbors: (1..=5).map(Address).collect(),
        });
        assert_eq!(encoded_size(&hello), 22);
        assert_eq!(encoded_size(&RouteMsg::Dis), 8);
    }

    #[test]
    fn kind_reflects_ctp_flags() {
        let mut m = Rreq {
            originator: Address(0),
            destination: Address(0),
            seq: SeqNum(4),
            hop_count: 0,
            flags: RreqFlags { trigger: true, ..Default::default() },
        };
        assert_eq!(RouteMsg::Rreq(m.clone()).kind(), MsgKind::RreqTrigger);
        m.flags = RreqFlags { build: true, rrep_required: true, trigger: false };
        assert_eq!(RouteMsg::Rreq(m).kind(), MsgKind::RreqBuild);
    }

    #[test]
    fn seq_comparison_examples() {
        assert!(seq_newer(SeqNum(5), SeqNum(3)));
        assert!(!seq_newer(SeqNum(3), SeqNum(3)));
        // (2 - 65534) mod 2^16 = 4
        assert!(seq_newer(SeqNum(2), SeqNum(65534)));
        assert!(!seq_newer(SeqNum(65534), SeqNum(2)));
    }

    proptest! {
        #[test]
        fn seq_newer_is_a_strict_order_within_half_window(base: u16, a in 0u16..0x4000, b in 0u16..0x4000, c in 0u16..0x4000) {
            let s = |x: u16| SeqNum(base.wrapping_add(x));
            // irreflexive and asymmetric
            prop_assert!(!seq_newer(s(a), s(a)));
            if seq_newer(s(a), s(b)) {
                prop_assert!(!seq_newer(s(b), s(a)));
            }
            // transitive
            if seq_newer(s(a), s(b)) && seq_newer(s(b), s(c)) {
                prop_assert!(seq_newer(s(a), s(c)));
            }
            // agrees with plain ordering inside the window
            prop_assert_eq!(seq_newer(s(a), s(b)), a > b);
        }
    }
}
