//! Reactive LOADng: RREQ flooding with duplicate suppression, unicast RREP
//! from the destination only, per-hop RREP-ACK, RERR on broken links and a
//! routing set whose tuples expire unless refreshed by traffic.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::{Ctx, Note, RoutingEngine};
use crate::kernel::{SimDuration, SimTime};
use crate::mac::FrameBody;
use crate::messages::{Address, MsgKind, Rerr, RouteMsg, Rrep, RrepAck, Rreq, RreqFlags, SeqNum};
use crate::metrics::Fate;
use crate::packet::DataPacket;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadngParams {
    /// Upper bound of the RREQ jitter, seconds.
    pub rreq_jitter_max: f64,
    /// Seconds a tuple stays valid after install or last use.
    pub route_lifetime: f64,
    /// Discovery timeout, seconds.
    pub net_traversal_time: f64,
    /// Data packets buffered per pending discovery.
    pub discovery_buffer: usize,
}

impl Default for LoadngParams {
    fn default() -> Self {
        LoadngParams { rreq_jitter_max: 0.5, route_lifetime: 15.0, net_traversal_time: 10.0, discovery_buffer: 4 }
    }
}

impl LoadngParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rreq_jitter_max >= 0.0) {
            return Err("protocol.rreq_jitter must be >= 0".into());
        }
        if !(self.route_lifetime > 0.0) || !(self.net_traversal_time > 0.0) {
            return Err("protocol.route_lifetime and protocol.net_traversal_time must be > 0".into());
        }
        if self.discovery_buffer == 0 {
            return Err("protocol.discovery_buffer must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LinkStatus {
    Heard,
    Sym,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutingTuple {
    pub dest: Address,
    pub next: Address,
    pub metric: u8,
    pub seq: SeqNum,
    pub valid_until: SimTime,
    pub status: LinkStatus,
}

impl RoutingTuple {
    pub fn is_valid(&self, now: SimTime) -> bool {
        self.valid_until >= now
    }

    pub fn is_persistent(&self) -> bool {
        self.valid_until == SimTime::MAX
    }
}

/// At most one tuple per destination.
#[derive(Clone, Debug, Default)]
pub struct RoutingSet {
    tuples: BTreeMap<Address, RoutingTuple>,
}

impl RoutingSet {
    pub fn get(&self, dest: Address) -> Option<&RoutingTuple> {
        self.tuples.get(&dest)
    }

    pub fn get_valid(&self, dest: Address, now: SimTime) -> Option<&RoutingTuple> {
        self.tuples.get(&dest).filter(|t| t.is_valid(now))
    }

    /// Install `cand` if it is fresher (newer seq) than the current tuple,
    /// or carries the same seq with a strictly better metric.
    pub fn offer(&mut self, cand: RoutingTuple, now: SimTime) -> bool {
        let accept = match self.tuples.get(&cand.dest) {
            None => true,
            Some(old) if !old.is_valid(now) => true,
            // Tree tuples are only replaced by other tree tuples.
            Some(old) if old.is_persistent() && !cand.is_persistent() => false,
            Some(old) => cand.seq.newer_than(old.seq) || (cand.seq == old.seq && cand.metric < old.metric),
        };
        if accept {
            self.tuples.insert(cand.dest, cand);
        }
        accept
    }

    pub fn insert(&mut self, t: RoutingTuple) {
        self.tuples.insert(t.dest, t);
    }

    /// Extend a used tuple's lifetime; persistent tuples stay put.
    pub fn refresh(&mut self, dest: Address, until: SimTime) {
        if let Some(t) = self.tuples.get_mut(&dest) {
            if t.valid_until < until {
                t.valid_until = until;
            }
        }
    }

    /// Remove every tuple whose next hop is `next`; returns their destinations.
    pub fn invalidate_via(&mut self, next: Address) -> Vec<Address> {
        let gone: Vec<Address> = self.tuples.values().filter(|t| t.next == next).map(|t| t.dest).collect();
        for d in &gone {
            self.tuples.remove(d);
        }
        gone
    }

    pub fn invalidate_reactive_via(&mut self, next: Address) -> Vec<Address> {
        let gone: Vec<Address> =
            self.tuples.values().filter(|t| t.next == next && !t.is_persistent()).map(|t| t.dest).collect();
        for d in &gone {
            self.tuples.remove(d);
        }
        gone
    }

    /// Remove the tuple for `dest` if it goes through `via`.
    pub fn invalidate(&mut self, dest: Address, via: Address) -> bool {
        if self.tuples.get(&dest).is_some_and(|t| t.next == via) {
            self.tuples.remove(&dest);
            return true;
        }
        false
    }

    pub fn expire(&mut self, now: SimTime) {
        self.tuples.retain(|_, t| t.is_valid(now));
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RoutingTuple> {
        self.tuples.values()
    }
}

pub const PERSISTENT_LINK_FAILURES: u8 = 3;

#[derive(Clone, Debug)]
pub struct PendingDiscovery {
    pub destination: Address,
    pub buffered: VecDeque<DataPacket>,
    pub id: u32,
    pub expires_at: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LoadngTimer {
    SendRreq { dest: Address, id: u32 },
    DiscoveryTimeout { dest: Address, id: u32 },
    Relay { originator: Address, kind: MsgKind, seq: SeqNum },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadngStats {
    pub discoveries: u64,
    pub discovery_timeouts: u64,
    pub rreq_relayed: u64,
    pub rreq_discarded: u64,
    pub rrep_generated: u64,
    pub rrep_forwarded: u64,
    pub rrep_dropped: u64,
    pub rrep_discarded: u64,
    pub rrep_ack_received: u64,
    pub rerr_sent: u64,
    pub rerr_received: u64,
    pub no_route_drops: u64,
}

/// Freshness of an incoming RREQ against the flood history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Freshness {
    New,
    Improved,
    Stale,
}

/// Per-node LOADng state. Used directly by [`LoadngEngine`] and embedded by
/// the collection-tree extension.
#[derive(Debug)]
pub struct LoadngCore {
    addr: Address,
    params: LoadngParams,
    route_lifetime: SimDuration,
    jitter_max: SimDuration,
    ntt: SimDuration,
    seq: SeqNum,
    routes: RoutingSet,
    pending: BTreeMap<Address, PendingDiscovery>,
    next_discovery_id: u32,
    history: BTreeMap<Address, (SeqNum, u8)>,
    relays: BTreeMap<(Address, MsgKind), Rreq>,
    /// Consecutive MAC give-ups per next hop.
    link_failures: BTreeMap<Address, u8>,
    /// Forwarding nodes without a route start a discovery instead of dropping.
    pub discover_on_forward: bool,
    /// RREPs heading to this address install tuples that never expire.
    pub persistent_toward: Option<Address>,
    stats: LoadngStats,
}

impl LoadngCore {
    pub fn new(addr: Address, params: LoadngParams) -> Self {
        LoadngCore {
            addr,
            route_lifetime: SimDuration::from_secs_f64(params.route_lifetime),
            jitter_max: SimDuration::from_secs_f64(params.rreq_jitter_max),
            ntt: SimDuration::from_secs_f64(params.net_traversal_time),
            params,
            seq: SeqNum(0),
            routes: RoutingSet::default(),
            pending: BTreeMap::new(),
            next_discovery_id: 0,
            history: BTreeMap::new(),
            relays: BTreeMap::new(),
            link_failures: BTreeMap::new(),
            discover_on_forward: false,
            persistent_toward: None,
            stats: LoadngStats::default(),
        }
    }

    pub fn addr(&self) -> Address {
        self.addr
    }

    pub fn params(&self) -> &LoadngParams {
        &self.params
    }

    pub fn routes(&self) -> &RoutingSet {
        &self.routes
    }

    pub fn routes_mut(&mut self) -> &mut RoutingSet {
        &mut self.routes
    }

    pub fn stats(&self) -> LoadngStats {
        self.stats
    }

    pub fn pending(&self, dest: Address) -> Option<&PendingDiscovery> {
        self.pending.get(&dest)
    }

    pub fn next_seq(&mut self) -> SeqNum {
        self.seq = self.seq.next();
        self.seq
    }

    pub fn has_valid_route(&self, dest: Address, now: SimTime) -> bool {
        self.routes.get_valid(dest, now).is_some()
    }

    pub fn expire_routes(&mut self, now: SimTime) {
        self.routes.expire(now);
    }

    /// Forward, deliver, buffer or drop a data packet.
    pub fn route_data<T: From<LoadngTimer>>(&mut self, ctx: &mut Ctx<'_, T>, pkt: DataPacket, originated: bool) {
        if pkt.dst == self.addr {
            ctx.deliver(pkt);
            return;
        }
        if let Some(t) = self.routes.get_valid(pkt.dst, ctx.now) {
            let next = t.next;
            self.routes.refresh(pkt.dst, ctx.now + self.route_lifetime);
            ctx.forward_data(next, pkt);
            return;
        }
        if originated || self.discover_on_forward {
            self.buffer_for_discovery(ctx, pkt);
        } else {
            self.stats.no_route_drops += 1;
            ctx.drop_packet(pkt, Fate::NoRoute);
        }
    }

    fn buffer_for_discovery<T: From<LoadngTimer>>(&mut self, ctx: &mut Ctx<'_, T>, pkt: DataPacket) {
        let dest = pkt.dst;
        if let Some(p) = self.pending.get_mut(&dest) {
            if p.buffered.len() >= self.params.discovery_buffer {
                ctx.drop_packet(pkt, Fate::BufferOverflow);
            } else {
                p.buffered.push_back(pkt);
            }
            return;
        }
        self.originate_rreq(ctx, dest, Some(pkt));
    }

    /// Start a discovery for `dest`: one RREQ after jitter, one timeout.
    pub fn originate_rreq<T: From<LoadngTimer>>(&mut self, ctx: &mut Ctx<'_, T>, dest: Address, first: Option<DataPacket>) {
        let id = self.next_discovery_id;
        self.next_discovery_id = self.next_discovery_id.wrapping_add(1);
        let mut buffered = VecDeque::new();
        buffered.extend(first);
        self.pending.insert(
            dest,
            PendingDiscovery { destination: dest, buffered, id, expires_at: ctx.now + self.ntt },
        );
        self.stats.discoveries += 1;
        ctx.note(Note::DiscoveryStarted);
        let jitter = ctx.jitter(self.jitter_max);
        ctx.set_timer(jitter, LoadngTimer::SendRreq { dest, id });
        ctx.set_timer(self.ntt, LoadngTimer::DiscoveryTimeout { dest, id });
    }

    pub fn flush_pending<T: From<LoadngTimer>>(&mut self, ctx: &mut Ctx<'_, T>, dest: Address) {
        // Buffered packets go out in FIFO order once any valid route appears.
        if let Some(p) = self.pending.remove(&dest) {
            for pkt in p.buffered {
                self.route_data(ctx, pkt, true);
            }
        }
    }

    /// Queue a RREQ relay after jitter. A later, better copy of the same
    /// flood replaces the queued one instead of adding a transmission.
    pub fn schedule_relay<T: From<LoadngTimer>>(&mut self, ctx: &mut Ctx<'_, T>, relay: Rreq, max_jitter: SimDuration) {
        let kind = RouteMsg::Rreq(relay.clone()).kind();
        let key = (relay.originator, kind);
        if let Some(queued) = self.relays.get_mut(&key) {
            if queued.seq == relay.seq {
                queued.hop_count = queued.hop_count.min(relay.hop_count);
                return;
            }
        }
        let seq = relay.seq;
        self.relays.insert(key, relay);
        let jitter = ctx.jitter(max_jitter);
        ctx.set_timer(jitter, LoadngTimer::Relay { originator: key.0, kind, seq });
    }

    pub fn on_timer<T: From<LoadngTimer>>(&mut self, ctx: &mut Ctx<'_, T>, timer: LoadngTimer) {
        match timer {
            LoadngTimer::SendRreq { dest, id } => {
                if self.pending.get(&dest).is_some_and(|p| p.id == id) {
                    let seq = self.next_seq();
                    self.history.insert(self.addr, (seq, 0));
                    ctx.note(Note::RreqOriginated);
                    ctx.broadcast(RouteMsg::Rreq(Rreq {
                        originator: self.addr,
                        destination: dest,
                        seq,
                        hop_count: 0,
                        flags: RreqFlags::default(),
                    }));
                }
            }
            LoadngTimer::DiscoveryTimeout { dest, id } => {
                if self.pending.get(&dest).is_some_and(|p| p.id == id) {
                    let p = self.pending.remove(&dest).expect("pending");
                    self.stats.discovery_timeouts += 1;
                    ctx.note(Note::DiscoveryTimedOut);
                    for pkt in p.buffered {
                        ctx.drop_packet(pkt, Fate::DiscoveryTimeout);
                    }
                }
            }
            LoadngTimer::Relay { originator, kind, seq } => {
                let key = (originator, kind);
                if self.relays.get(&key).is_some_and(|r| r.seq == seq) {
                    let r = self.relays.remove(&key).expect("relay");
                    self.stats.rreq_relayed += 1;
                    ctx.broadcast(RouteMsg::Rreq(r));
                }
            }
        }
    }

    fn freshness(&self, m: &Rreq, metric: u8) -> Freshness {
        match self.history.get(&m.originator) {
            None => Freshness::New,
            Some(&(seq, _)) if m.seq.newer_than(seq) => Freshness::New,
            Some(&(seq, best)) if m.seq == seq && metric < best => Freshness::Improved,
            _ => Freshness::Stale,
        }
    }

    /// Plain (unflagged) RREQ handling.
    pub fn process_rreq<T: From<LoadngTimer>>(&mut self, ctx: &mut Ctx<'_, T>, m: Rreq, prev_hop: Address) {
        if m.originator == self.addr {
            return;
        }
        let metric = m.hop_count.saturating_add(1);
        if self.freshness(&m, metric) == Freshness::Stale {
            self.stats.rreq_discarded += 1;
            return;
        }
        self.history.insert(m.originator, (m.seq, metric));
        let reverse = RoutingTuple {
            dest: m.originator,
            next: prev_hop,
            metric,
            seq: m.seq,
            valid_until: ctx.now + self.route_lifetime,
            status: LinkStatus::Heard,
        };
        if self.routes.offer(reverse, ctx.now) {
            self.flush_pending(ctx, m.originator);
        }
        if m.destination == self.addr {
            self.generate_rrep(ctx, m.originator);
        } else {
            let jitter = self.jitter_max;
            self.schedule_relay(ctx, Rreq { hop_count: metric, ..m }, jitter);
        }
    }

    /// Reply to a RREQ that reached its destination.
    pub fn generate_rrep<T>(&mut self, ctx: &mut Ctx<'_, T>, requester: Address) {
        let Some(next) = self.routes.get_valid(requester, ctx.now).map(|t| t.next) else {
            self.stats.rrep_dropped += 1;
            ctx.note(Note::RrepDropped);
            return;
        };
        let seq = self.next_seq();
        self.stats.rrep_generated += 1;
        ctx.note(Note::RrepGenerated);
        ctx.unicast(next, RouteMsg::Rrep(Rrep { originator: self.addr, destination: requester, seq, hop_count: 0 }));
    }

    /// Send an RREP toward `toward` (used by the collection tree's
    /// root-to-sensor path build).
    pub fn send_rrep_to<T>(&mut self, ctx: &mut Ctx<'_, T>, toward: Address) -> bool {
        let before = self.stats.rrep_dropped;
        self.generate_rrep(ctx, toward);
        self.stats.rrep_dropped == before
    }

    pub fn process_rrep<T: From<LoadngTimer>>(&mut self, ctx: &mut Ctx<'_, T>, m: Rrep, prev_hop: Address) {
        ctx.unicast(prev_hop, RouteMsg::RrepAck(RrepAck { originator: self.addr, destination: prev_hop, seq: m.seq }));
        let metric = m.hop_count.saturating_add(1);
        let persistent = self.persistent_toward == Some(m.destination);
        let forward = RoutingTuple {
            dest: m.originator,
            next: prev_hop,
            metric,
            seq: m.seq,
            valid_until: if persistent { SimTime::MAX } else { ctx.now + self.route_lifetime },
            status: if persistent { LinkStatus::Sym } else { LinkStatus::Heard },
        };
        // A tree tuple outranks the reactive one, but the RREP must still
        // reach the node that asked for it.
        let tree_kept = !persistent
            && self.routes.get_valid(m.originator, ctx.now).is_some_and(RoutingTuple::is_persistent);
        if !self.routes.offer(forward, ctx.now) && !tree_kept {
            self.stats.rrep_discarded += 1;
            return;
        }
        self.flush_pending(ctx, m.originator);
        if m.destination == self.addr {
            return;
        }
        match self.routes.get_valid(m.destination, ctx.now).map(|t| t.next) {
            Some(next) => {
                self.stats.rrep_forwarded += 1;
                ctx.unicast(next, RouteMsg::Rrep(Rrep { hop_count: metric, ..m }));
            }
            None => {
                self.stats.rrep_dropped += 1;
                ctx.note(Note::RrepDropped);
            }
        }
    }

    /// MAC gave up on a frame to `failed_next`: drop every route through it
    /// and, for data, tell the packet's source.
    pub fn link_ok(&mut self, next: Address) {
        self.link_failures.remove(&next);
    }

    /// Reactive tuples through `failed_next` go at once; persistent ones
    /// only after [`PERSISTENT_LINK_FAILURES`] give-ups in a row.
    pub fn handle_broken_link<T>(&mut self, ctx: &mut Ctx<'_, T>, failed_next: Address, body: &FrameBody) -> Vec<Address> {
        let failures = self.link_failures.entry(failed_next).or_insert(0);
        *failures = failures.saturating_add(1);
        let affected = if *failures >= PERSISTENT_LINK_FAILURES {
            self.link_failures.remove(&failed_next);
            self.routes.invalidate_via(failed_next)
        } else {
            self.routes.invalidate_reactive_via(failed_next)
        };
        if let FrameBody::Data(pkt) = body {
            if !affected.is_empty() && pkt.src != self.addr {
                if let Some(next) = self.routes.get_valid(pkt.src, ctx.now).map(|t| t.next) {
                    self.stats.rerr_sent += 1;
                    ctx.note(Note::RerrSent);
                    ctx.unicast(
                        next,
                        RouteMsg::Rerr(Rerr { originator: self.addr, destination: pkt.src, unreachable: pkt.dst }),
                    );
                }
            }
        }
        affected
    }

    pub fn process_rerr<T>(&mut self, ctx: &mut Ctx<'_, T>, m: Rerr, prev_hop: Address) {
        self.stats.rerr_received += 1;
        self.routes.invalidate(m.unreachable, prev_hop);
        if m.destination == self.addr {
            return;
        }
        if let Some(next) = self.routes.get_valid(m.destination, ctx.now).map(|t| t.next) {
            ctx.unicast(next, RouteMsg::Rerr(m));
        }
    }

    /// Dispatch for the message types plain LOADng understands.
    pub fn on_control<T: From<LoadngTimer>>(&mut self, ctx: &mut Ctx<'_, T>, msg: RouteMsg, from: Address) {
        match msg {
            RouteMsg::Rreq(m) => self.process_rreq(ctx, m, from),
            RouteMsg::Rrep(m) => self.process_rrep(ctx, m, from),
            RouteMsg::RrepAck(_) => self.stats.rrep_ack_received += 1,
            RouteMsg::Rerr(m) => self.process_rerr(ctx, m, from),
            _ => {}
        }
    }
}

/// Plain LOADng routing engine.
#[derive(Debug)]
pub struct LoadngEngine {
    core: LoadngCore,
}

impl LoadngEngine {
    pub fn new(addr: Address, params: LoadngParams) -> Self {
        LoadngEngine { core: LoadngCore::new(addr, params) }
    }

    pub fn core(&self) -> &LoadngCore {
        &self.core
    }
}

impl RoutingEngine for LoadngEngine {
    type Timer = LoadngTimer;

    fn start(&mut self, _ctx: &mut Ctx<'_, LoadngTimer>) {}

    fn on_timer(&mut self, ctx: &mut Ctx<'_, LoadngTimer>, timer: LoadngTimer) {
        self.core.expire_routes(ctx.now);
        self.core.on_timer(ctx, timer);
    }

    fn on_control(&mut self, ctx: &mut Ctx<'_, LoadngTimer>, msg: RouteMsg, from: Address) {
        self.core.expire_routes(ctx.now);
        self.core.on_control(ctx, msg, from);
    }

    fn on_data(&mut self, ctx: &mut Ctx<'_, LoadngTimer>, pkt: DataPacket, _from: Address) {
        self.core.expire_routes(ctx.now);
        self.core.route_data(ctx, pkt, false);
    }

    fn originate(&mut self, ctx: &mut Ctx<'_, LoadngTimer>, pkt: DataPacket) {
        self.core.expire_routes(ctx.now);
        self.core.route_data(ctx, pkt, true);
    }

    fn on_link_failure(&mut self, ctx: &mut Ctx<'_, LoadngTimer>, next_hop: Address, body: &FrameBody) {
        self.core.handle_broken_link(ctx, next_hop, body);
    }

    fn on_link_ok(&mut self, _ctx: &mut Ctx<'_, LoadngTimer>, next_hop: Address) {
        self.core.link_ok(next_hop);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Action;
    use crate::kernel::RandomStream;
    use crate::packet::{AppKind, Direction, PacketId};

    fn tuple(dest: u16, next: u16, metric: u8, seq: u16, until: u64) -> RoutingTuple {
        RoutingTuple {
            dest: Address(dest),
            next: Address(next),
            metric,
            seq: SeqNum(seq),
            valid_until: SimTime::from_micros(until),
            status: LinkStatus::Heard,
        }
    }

    #[test]
    fn offer_prefers_fresh_then_better() {
        let now = SimTime::ZERO;
        let mut rs = RoutingSet::default();
        assert!(rs.offer(tuple(5, 1, 3, 10, 100), now));
        assert!(!rs.offer(tuple(5, 2, 3, 10, 100), now), "same seq, same metric");
        assert!(rs.offer(tuple(5, 2, 2, 10, 100), now), "same seq, better metric");
        assert!(!rs.offer(tuple(5, 3, 1, 9, 100), now), "older seq");
        assert!(rs.offer(tuple(5, 3, 4, 11, 100), now), "newer seq wins even if longer");
        assert_eq!(rs.get(Address(5)).unwrap().next, Address(3));
        assert_eq!(rs.len(), 1);
    }

    #[test]
    fn expiry_and_refresh() {
        let mut rs = RoutingSet::default();
        rs.insert(tuple(1, 1, 1, 1, 15_000_000));
        rs.expire(SimTime::from_micros(15_000_000));
        assert_eq!(rs.len(), 1, "valid through its deadline");
        rs.refresh(Address(1), SimTime::from_micros(30_000_000));
        rs.expire(SimTime::from_micros(15_000_001));
        assert_eq!(rs.len(), 1);
        rs.expire(SimTime::from_micros(30_000_001));
        assert!(rs.is_empty());
        rs.expire(SimTime::from_micros(30_000_001));
        assert!(rs.is_empty());
    }

    #[test]
    fn invalidation_by_next_hop() {
        let mut rs = RoutingSet::default();
        rs.insert(tuple(1, 7, 1, 1, 100));
        rs.insert(tuple(2, 7, 2, 1, 100));
        rs.insert(tuple(3, 8, 2, 1, 100));
        let mut gone = rs.invalidate_via(Address(7));
        gone.sort();
        assert_eq!(gone, vec![Address(1), Address(2)]);
        assert!(!rs.invalidate(Address(3), Address(7)));
        assert!(rs.invalidate(Address(3), Address(8)));
    }

    fn run<F: FnOnce(&mut LoadngCore, &mut Ctx<'_, LoadngTimer>)>(core: &mut LoadngCore, now: SimTime, f: F) -> Vec<Action<LoadngTimer>> {
        let mut rng = RandomStream::new(1, core.addr().0 as u64);
        let mut actions = Vec::new();
        let mut ctx = Ctx::new(now, core.addr(), &mut rng, &mut actions);
        f(core, &mut ctx);
        actions
    }

    fn rreq(orig: u16, dest: u16, seq: u16, hops: u8) -> Rreq {
        Rreq {
            originator: Address(orig),
            destination: Address(dest),
            seq: SeqNum(seq),
            hop_count: hops,
            flags: RreqFlags::default(),
        }
    }

    fn data(src: u16, dst: u16) -> DataPacket {
        DataPacket {
            id: PacketId(0),
            src: Address(src),
            dst: Address(dst),
            direction: Direction::Upward,
            kind: AppKind::Probe,
            app_bytes: 10,
            created_at: SimTime::ZERO,
            source_route: None,
            hops: 0,
        }
    }

    #[test]
    fn duplicate_rreq_with_equal_metric_is_not_relayed() {
        let mut core = LoadngCore::new(Address(2), LoadngParams::default());
        let a = run(&mut core, SimTime::ZERO, |c, ctx| c.process_rreq(ctx, rreq(1, 9, 1, 0), Address(1)));
        assert!(a.iter().any(|x| matches!(x, Action::Timer { timer: LoadngTimer::Relay { .. }, .. })));
        let b = run(&mut core, SimTime::ZERO, |c, ctx| c.process_rreq(ctx, rreq(1, 9, 1, 0), Address(3)));
        assert!(b.is_empty());
        assert_eq!(core.stats().rreq_discarded, 1);
    }

    #[test]
    fn intermediate_with_route_still_forwards_and_never_replies() {
        let mut core = LoadngCore::new(Address(2), LoadngParams::default());
        core.routes_mut().insert(tuple(9, 9, 1, 1, u64::MAX));
        let a = run(&mut core, SimTime::ZERO, |c, ctx| c.process_rreq(ctx, rreq(1, 9, 1, 0), Address(1)));
        assert!(!a.iter().any(|x| matches!(x, Action::Send { .. })), "no RREP from an intermediate");
        assert!(a.iter().any(|x| matches!(x, Action::Timer { timer: LoadngTimer::Relay { .. }, .. })));
    }

    #[test]
    fn destination_replies_once_per_improvement() {
        let mut core = LoadngCore::new(Address(9), LoadngParams::default());
        let sends = |a: &[Action<LoadngTimer>]| {
            a.iter().filter(|x| matches!(x, Action::Send { body: FrameBody::Control(RouteMsg::Rrep(_)), .. })).count()
        };
        let a = run(&mut core, SimTime::ZERO, |c, ctx| c.process_rreq(ctx, rreq(1, 9, 1, 2), Address(4)));
        assert_eq!(sends(&a), 1);
        let b = run(&mut core, SimTime::ZERO, |c, ctx| c.process_rreq(ctx, rreq(1, 9, 1, 2), Address(5)));
        assert_eq!(sends(&b), 0);
        let c = run(&mut core, SimTime::ZERO, |c, ctx| c.process_rreq(ctx, rreq(1, 9, 1, 1), Address(6)));
        assert_eq!(sends(&c), 1);
        assert_eq!(core.routes().get(Address(1)).unwrap().next, Address(6));
        assert_eq!(core.routes().get(Address(1)).unwrap().metric, 2);
    }

    #[test]
    fn rrep_with_expired_reverse_route_is_dropped() {
        let mut core = LoadngCore::new(Address(9), LoadngParams::default());
        run(&mut core, SimTime::ZERO, |c, ctx| c.process_rreq(ctx, rreq(1, 8, 1, 0), Address(1)));
        let later = SimTime::from_secs_f64(20.0);
        let a = run(&mut core, later, |c, ctx| {
            c.expire_routes(later);
            c.generate_rrep(ctx, Address(1))
        });
        assert!(a.iter().all(|x| !matches!(x, Action::Send { .. })));
        assert_eq!(core.stats().rrep_dropped, 1);
    }

    #[test]
    fn rrep_without_reverse_state_is_dropped_but_acked() {
        let mut core = LoadngCore::new(Address(2), LoadngParams::default());
        let m = Rrep { originator: Address(9), destination: Address(1), seq: SeqNum(1), hop_count: 0 };
        let a = run(&mut core, SimTime::ZERO, |c, ctx| c.process_rrep(ctx, m, Address(9)));
        assert_eq!(a.len(), 2);
        assert!(matches!(&a[0], Action::Send { next_hop, body: FrameBody::Control(RouteMsg::RrepAck(_)) } if *next_hop == Address(9)));
        assert!(matches!(a[1], Action::Note(Note::RrepDropped)));
    }

    #[test]
    fn valid_route_means_no_discovery() {
        let mut core = LoadngCore::new(Address(1), LoadngParams::default());
        core.routes_mut().insert(tuple(9, 2, 2, 1, 20_000_000));
        let a = run(&mut core, SimTime::from_secs_f64(10.0), |c, ctx| c.route_data(ctx, data(1, 9), true));
        assert_eq!(a.len(), 1);
        assert!(matches!(&a[0], Action::Send { next_hop, body: FrameBody::Data(_) } if *next_hop == Address(2)));
        assert_eq!(core.routes().get(Address(9)).unwrap().valid_until, SimTime::from_secs_f64(25.0));
    }

    #[test]
    fn missing_route_buffers_and_starts_one_discovery() {
        let mut core = LoadngCore::new(Address(1), LoadngParams::default());
        let a = run(&mut core, SimTime::ZERO, |c, ctx| {
            for _ in 0..6 {
                c.route_data(ctx, data(1, 9), true);
            }
        });
        let send_rreq = a.iter().filter(|x| matches!(x, Action::Timer { timer: LoadngTimer::SendRreq { .. }, .. })).count();
        assert_eq!(send_rreq, 1);
        for x in &a {
            if let Action::Timer { delay, timer: LoadngTimer::SendRreq { .. } } = x {
                assert!(*delay <= SimDuration::from_millis(500));
            }
        }
        let overflow = a.iter().filter(|x| matches!(x, Action::Drop(_, Fate::BufferOverflow))).count();
        assert_eq!(overflow, 2);
        assert_eq!(core.pending(Address(9)).unwrap().buffered.len(), 4);
    }

    #[test]
    fn intermediate_without_route_drops() {
        let mut core = LoadngCore::new(Address(2), LoadngParams::default());
        let a = run(&mut core, SimTime::ZERO, |c, ctx| c.route_data(ctx, data(1, 9), false));
        assert!(matches!(a[0], Action::Drop(_, Fate::NoRoute)));
    }

    #[test]
    fn broken_link_without_affected_tuples_sends_no_rerr() {
        let mut core = LoadngCore::new(Address(2), LoadngParams::default());
        core.routes_mut().insert(tuple(1, 1, 1, 1, 100_000_000));
        let a = run(&mut core, SimTime::ZERO, |c, ctx| {
            c.handle_broken_link(ctx, Address(5), &FrameBody::Data(data(1, 9)));
        });
        assert!(a.is_empty());
        core.routes_mut().insert(tuple(9, 5, 1, 1, 100_000_000));
        let b = run(&mut core, SimTime::ZERO, |c, ctx| {
            c.handle_broken_link(ctx, Address(5), &FrameBody::Data(data(1, 9)));
        });
        assert!(b.iter().any(|x| matches!(x, Action::Send { next_hop, body: FrameBody::Control(RouteMsg::Rerr(_)) } if *next_hop == Address(1))));
    }

    #[test]
    fn persistent_tuples_survive_isolated_give_ups() {
        let mut core = LoadngCore::new(Address(2), LoadngParams::default());
        core.routes_mut().insert(tuple(0, 5, 1, 1, u64::MAX));
        let body = FrameBody::Data(data(2, 0));
        for _ in 0..PERSISTENT_LINK_FAILURES - 1 {
            run(&mut core, SimTime::ZERO, |c, ctx| {
                c.handle_broken_link(ctx, Address(5), &body);
            });
        }
        core.link_ok(Address(5));
        for _ in 0..PERSISTENT_LINK_FAILURES - 1 {
            run(&mut core, SimTime::ZERO, |c, ctx| {
                c.handle_broken_link(ctx, Address(5), &body);
            });
        }
        assert!(core.routes().get(Address(0)).is_some());
        run(&mut core, SimTime::ZERO, |c, ctx| {
            c.handle_broken_link(ctx, Address(5), &body);
        });
        assert!(core.routes().get(Address(0)).is_none());
    }

    #[test]
    fn rerr_invalidates_matching_tuple() {
        let mut core = LoadngCore::new(Address(1), LoadngParams::default());
        core.routes_mut().insert(tuple(9, 2, 2, 1, u64::MAX));
        let m = Rerr { originator: Address(2), destination: Address(1), unreachable: Address(9) };
        run(&mut core, SimTime::ZERO, |c, ctx| c.process_rerr(ctx, m, Address(2)));
        assert!(core.routes().get(Address(9)).is_none());
    }
}
