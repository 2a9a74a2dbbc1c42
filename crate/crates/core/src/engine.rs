//! Interface between the simulator and a per-node routing protocol.
//!
//! Engines never touch the event queue or the MAC directly. Every callback
//! receives a [`Ctx`] through which it queues frames, arms timers and reports
//! packet fates; the simulator applies those actions once the callback
//! returns.

use std::fmt::Debug;

use crate::kernel::{RandomStream, SimDuration, SimTime};
use crate::mac::FrameBody;
use crate::messages::{Address, RouteMsg};
use crate::metrics::Fate;
use crate::packet::DataPacket;

/// Bytes of source-route header per listed hop.
pub const SOURCE_ROUTE_BYTES_PER_HOP: usize = 2;

/// Protocol events worth counting or tracing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Note {
    DiscoveryStarted,
    DiscoveryTimedOut,
    RreqOriginated,
    RrepGenerated,
    RrepDropped,
    RerrSent,
    TriggerOriginated,
    BuildOriginated,
    BuildBeforeTrigger,
    BuildFromHeardDiscarded,
    RrepPathStarted,
    FallbackDiscovery,
    TreeRouteLost,
    TreeRepaired,
    DioSent,
    DioSuppressed,
    DaoSent,
    Joined,
    ParentLost,
}

#[derive(Debug)]
pub enum Action<T> {
    Send { next_hop: Address, body: FrameBody },
    Timer { delay: SimDuration, timer: T },
    Deliver(DataPacket),
    Drop(DataPacket, Fate),
    Note(Note),
}

pub struct Ctx<'a, T> {
    pub now: SimTime,
    pub addr: Address,
    pub rng: &'a mut RandomStream,
    actions: &'a mut Vec<Action<T>>,
}

impl<'a, T> Ctx<'a, T> {
    pub fn new(now: SimTime, addr: Address, rng: &'a mut RandomStream, actions: &'a mut Vec<Action<T>>) -> Self {
        Ctx { now, addr, rng, actions }
    }

    pub fn broadcast(&mut self, msg: RouteMsg) {
        self.actions.push(Action::Send { next_hop: Address::BROADCAST, body: FrameBody::Control(msg) });
    }

    pub fn unicast(&mut self, next_hop: Address, msg: RouteMsg) {
        self.actions.push(Action::Send { next_hop, body: FrameBody::Control(msg) });
    }

    pub fn forward_data(&mut self, next_hop: Address, pkt: DataPacket) {
        self.actions.push(Action::Send { next_hop, body: FrameBody::Data(pkt) });
    }

    pub fn set_timer(&mut self, delay: SimDuration, timer: impl Into<T>) {
        self.actions.push(Action::Timer { delay, timer: timer.into() });
    }

    pub fn deliver(&mut self, pkt: DataPacket) {
        self.actions.push(Action::Deliver(pkt));
    }

    pub fn drop_packet(&mut self, pkt: DataPacket, fate: Fate) {
        self.actions.push(Action::Drop(pkt, fate));
    }

    pub fn note(&mut self, note: Note) {
        self.actions.push(Action::Note(note));
    }

    /// Uniform jitter in `[0, max]`.
    pub fn jitter(&mut self, max: SimDuration) -> SimDuration {
        self.rng.uniform_duration(SimDuration::ZERO, max)
    }
}

/// Payload size of a data frame: application bytes plus any source route.
pub fn data_frame_bytes(pkt: &DataPacket) -> usize {
    let route = pkt
        .source_route
        .as_ref()
        .map_or(0, |r| SOURCE_ROUTE_BYTES_PER_HOP * (r.len() + 1));
    pkt.app_bytes + route
}

/// A routing protocol instance for one node.
pub trait RoutingEngine {
    type Timer: Clone + Debug;

    fn start(&mut self, ctx: &mut Ctx<'_, Self::Timer>);

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Self::Timer>, timer: Self::Timer);

    fn on_control(&mut self, ctx: &mut Ctx<'_, Self::Timer>, msg: RouteMsg, from: Address);

    /// A data frame addressed to this node arrived from `from`.
    fn on_data(&mut self, ctx: &mut Ctx<'_, Self::Timer>, pkt: DataPacket, from: Address);

    /// The application on this node hands a new packet down.
    fn originate(&mut self, ctx: &mut Ctx<'_, Self::Timer>, pkt: DataPacket);

    /// The MAC gave up on a unicast frame to `next_hop`. Data packets in
    /// `body` have already been recorded as dropped.
    fn on_link_failure(&mut self, ctx: &mut Ctx<'_, Self::Timer>, next_hop: Address, body: &FrameBody);

    /// A unicast frame to `next_hop` was acknowledged.
    fn on_link_ok(&mut self, _ctx: &mut Ctx<'_, Self::Timer>, _next_hop: Address) {}
}
