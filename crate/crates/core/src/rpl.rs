//! Single-DODAG RPL in non-storing mode: hop-count rank, DIO dissemination
//! under a trickle timer, DIS solicitation, periodic DAOs relayed to the
//! root and source-routed downward traffic.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::{Ctx, Note, RoutingEngine};
use crate::kernel::{RandomStream, SimDuration};
use crate::mac::FrameBody;
use crate::messages::{Address, Dao, Dio, RouteMsg, SeqNum};
use crate::metrics::Fate;
use crate::packet::DataPacket;

pub const ROOT_RANK: u16 = 1;
pub const INFINITE_RANK: u16 = u16::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RplParams {
    pub dio_interval_min: f64,
    pub dio_interval_doublings: u32,
    pub dio_redundancy_constant: u32,
    pub dao_interval: f64,
    /// Seconds between DIS broadcasts while unjoined.
    pub dis_interval: f64,
    /// Upward packets held while unjoined.
    pub join_buffer: usize,
    pub mode: String,
    pub rank_metric: String,
}

impl Default for RplParams {
    fn default() -> Self {
        RplParams {
            dio_interval_min: 2.0,
            dio_interval_doublings: 20,
            dio_redundancy_constant: 1,
            dao_interval: 15.0,
            dis_interval: 10.0,
            join_buffer: 4,
            mode: "non-storing".into(),
            rank_metric: "hop-count".into(),
        }
    }
}

impl RplParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dio_interval_min > 0.0) || !(self.dao_interval > 0.0) || !(self.dis_interval > 0.0) {
            return Err("dio_interval_min, dao_interval and dis_interval must be > 0".into());
        }
        if self.dio_interval_doublings > 40 {
            return Err("dio_interval_doublings must be <= 40".into());
        }
        if self.mode != "non-storing" {
            return Err(format!("mode must be \"non-storing\" (got {:?})", self.mode));
        }
        if self.rank_metric != "hop-count" {
            return Err(format!("rank_metric must be \"hop-count\" (got {:?})", self.rank_metric));
        }
        Ok(())
    }
}

/// Trickle timer state. Fires once per interval at a point drawn from
/// `[I/2, I)`, transmits only if fewer than `k` consistent messages were
/// heard, and doubles the interval up to `imin * 2^doublings`.
#[derive(Clone, Debug)]
pub struct Trickle {
    imin: SimDuration,
    imax: SimDuration,
    k: u32,
    interval: SimDuration,
    counter: u32,
    generation: u32,
}

impl Trickle {
    pub fn new(imin: SimDuration, doublings: u32, k: u32) -> Self {
        Trickle { imin, imax: imin.saturating_mul(1u64 << doublings), k, interval: imin, counter: 0, generation: 0 }
    }

    pub fn interval(&self) -> SimDuration {
        self.interval
    }

    pub fn max_interval(&self) -> SimDuration {
        self.imax
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    /// Start a new interval; returns (fire offset, interval length) and the
    /// generation tag that stale timers are checked against.
    pub fn begin(&mut self, rng: &mut RandomStream) -> (SimDuration, SimDuration, u32) {
        self.counter = 0;
        self.generation = self.generation.wrapping_add(1);
        let half = SimDuration::from_micros(self.interval.as_micros() / 2);
        let last = SimDuration::from_micros(self.interval.as_micros().saturating_sub(1).max(half.as_micros()));
        let t = rng.uniform_duration(half, last);
        (t, self.interval, self.generation)
    }

    /// Interval ended: double it, capped.
    pub fn expire(&mut self) {
        self.interval = self.interval.saturating_mul(2).min(self.imax);
    }

    pub fn hear_consistent(&mut self) {
        self.counter = self.counter.saturating_add(1);
    }

    pub fn should_transmit(&self) -> bool {
        self.counter < self.k
    }

    /// Inconsistency: back to the minimum interval unless already there.
    /// Returns whether a new interval must be started.
    pub fn reset(&mut self) -> bool {
        if self.interval != self.imin {
            self.interval = self.imin;
            return true;
        }
        false
    }

    /// Stop: invalidates outstanding timers.
    pub fn stop(&mut self) {
        self.generation = self.generation.wrapping_add(1);
        self.interval = self.imin;
        self.counter = 0;
    }
}

/// Root-side child to parent links learned from DAOs.
#[derive(Clone, Debug, Default)]
pub struct SourceRouteTable {
    parent_of: BTreeMap<Address, (Address, SeqNum)>,
}

impl SourceRouteTable {
    pub fn update(&mut self, child: Address, parent: Address, seq: SeqNum) {
        match self.parent_of.get(&child) {
            Some(&(_, old)) if !seq.newer_than(old) => {}
            _ => {
                self.parent_of.insert(child, (parent, seq));
            }
        }
    }

    pub fn parent_of(&self, child: Address) -> Option<Address> {
        self.parent_of.get(&child).map(|p| p.0)
    }

    pub fn len(&self) -> usize {
        self.parent_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent_of.is_empty()
    }

    /// Full hop list `[root, .., dest]` spliced from parent links, or `None`
    /// if the chain is broken or loops.
    pub fn path_to(&self, root: Address, dest: Address) -> Option<Vec<Address>> {
        let mut path = vec![dest];
        let mut seen = BTreeSet::from([dest]);
        let mut cur = dest;
        while cur != root {
            let p = self.parent_of(cur)?;
            if !seen.insert(p) {
                return None;
            }
            path.push(p);
            cur = p;
        }
        path.reverse();
        Some(path)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RplTimer {
    TrickleFire { generation: u32 },
    TrickleEnd { generation: u32 },
    Dao { generation: u32 },
    Dis,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RplStats {
    pub dio_sent: u64,
    pub dio_suppressed: u64,
    pub dao_sent: u64,
    pub dao_forwarded: u64,
    pub dis_sent: u64,
    pub parent_changes: u64,
    pub detaches: u64,
}

#[derive(Debug)]
pub struct RplEngine {
    addr: Address,
    root: Address,
    params: RplParams,
    rank: u16,
    parent: Option<Address>,
    parent_set: BTreeMap<Address, u16>,
    trickle: Trickle,
    dao_seq: SeqNum,
    dao_generation: u32,
    routes: SourceRouteTable,
    /// Newest DAO seq forwarded per originator.
    dao_forwarded: BTreeMap<Address, SeqNum>,
    buffer: VecDeque<DataPacket>,
    stats: RplStats,
}

impl RplEngine {
    pub fn new(addr: Address, root: Address, params: RplParams) -> Self {
        let trickle = Trickle::new(
            SimDuration::from_secs_f64(params.dio_interval_min),
            params.dio_interval_doublings,
            params.dio_redundancy_constant,
        );
        RplEngine {
            addr,
            root,
            rank: if addr == root { ROOT_RANK } else { INFINITE_RANK },
            params,
            parent: None,
            parent_set: BTreeMap::new(),
            trickle,
            dao_seq: SeqNum(0),
            dao_generation: 0,
            routes: SourceRouteTable::default(),
            dao_forwarded: BTreeMap::new(),
            buffer: VecDeque::new(),
            stats: RplStats::default(),
        }
    }

    pub fn is_root(&self) -> bool {
        self.addr == self.root
    }

    pub fn rank(&self) -> u16 {
        self.rank
    }

    pub fn is_joined(&self) -> bool {
        self.rank != INFINITE_RANK
    }

    pub fn preferred_parent(&self) -> Option<Address> {
        self.parent
    }

    pub fn source_routes(&self) -> &SourceRouteTable {
        &self.routes
    }

    pub fn trickle(&self) -> &Trickle {
        &self.trickle
    }

    pub fn stats(&self) -> RplStats {
        self.stats
    }

    fn start_interval(&mut self, ctx: &mut Ctx<'_, RplTimer>) {
        let (fire, end, generation) = self.trickle.begin(ctx.rng);
        ctx.set_timer(fire, RplTimer::TrickleFire { generation });
        ctx.set_timer(end, RplTimer::TrickleEnd { generation });
    }

    fn trickle_reset(&mut self, ctx: &mut Ctx<'_, RplTimer>) {
        if self.trickle.reset() {
            self.start_interval(ctx);
        }
    }

    fn schedule_dao(&mut self, ctx: &mut Ctx<'_, RplTimer>, delay: SimDuration) {
        self.dao_generation = self.dao_generation.wrapping_add(1);
        ctx.set_timer(delay, RplTimer::Dao { generation: self.dao_generation });
    }

    fn best_candidate(&self) -> Option<(u16, Address)> {
        self.parent_set
            .iter()
            .filter(|&(_, &r)| r < self.rank && r < INFINITE_RANK - 1)
            .map(|(&a, &r)| (r, a))
            .min()
    }

    /// Pick the minimum-rank parent (lowest address on ties) among
    /// neighbours advertising a rank below our own.
    fn select_parent(&mut self, ctx: &mut Ctx<'_, RplTimer>) {
        let Some((prank, p)) = self.best_candidate() else {
            return;
        };
        let new_rank = prank + 1;
        if self.parent == Some(p) && self.rank == new_rank {
            return;
        }
        let joining = !self.is_joined();
        self.parent = Some(p);
        self.rank = new_rank;
        self.stats.parent_changes += 1;
        if joining {
            ctx.note(Note::Joined);
            self.trickle.stop();
            self.start_interval(ctx);
            while let Some(pkt) = self.buffer.pop_front() {
                ctx.forward_data(p, pkt);
            }
        } else {
            self.trickle_reset(ctx);
        }
        let d = ctx.jitter(SimDuration::from_secs(1));
        self.schedule_dao(ctx, d);
    }

    /// The preferred parent is gone: take a better neighbour, else a
    /// sibling at our own rank (moving one rank down), else detach.
    fn parent_lost(&mut self, ctx: &mut Ctx<'_, RplTimer>) {
        self.parent = None;
        if self.best_candidate().is_none() {
            let sibling =
                self.parent_set.iter().filter(|&(_, &r)| r == self.rank).map(|(&a, _)| a).next();
            match sibling {
                Some(_) => self.rank = self.rank.saturating_add(1),
                None => {
                    self.detach(ctx);
                    return;
                }
            }
        }
        self.select_parent(ctx);
    }

    /// Upward traffic from our own parent means it selected us as parent.
    fn loop_detected(&mut self, ctx: &mut Ctx<'_, RplTimer>, from: Address) -> bool {
        if self.is_root() || self.parent != Some(from) {
            return false;
        }
        self.parent_set.remove(&from);
        self.parent_lost(ctx);
        true
    }

    /// Leave the DODAG and poison our sub-DODAG.
    fn detach(&mut self, ctx: &mut Ctx<'_, RplTimer>) {
        self.parent_set.clear();
        ctx.broadcast(RouteMsg::Dio(Dio { dodag_id: self.root, rank: INFINITE_RANK }));
        self.parent = None;
        self.rank = INFINITE_RANK;
        self.trickle.stop();
        self.dao_generation = self.dao_generation.wrapping_add(1);
        self.stats.detaches += 1;
        ctx.note(Note::ParentLost);
        ctx.set_timer(SimDuration::from_secs_f64(self.params.dis_interval), RplTimer::Dis);
    }

    fn process_dio(&mut self, ctx: &mut Ctx<'_, RplTimer>, m: Dio, from: Address) {
        if m.dodag_id != self.root {
            return;
        }
        if m.rank >= INFINITE_RANK {
            self.parent_set.remove(&from);
            if !self.is_root() && self.parent == Some(from) {
                self.parent_lost(ctx);
            }
            return;
        }
        self.parent_set.insert(from, m.rank);
        if self.is_root() {
            if m.rank >= self.rank + 2 {
                self.trickle_reset(ctx);
            } else {
                self.trickle.hear_consistent();
            }
            return;
        }
        let before = (self.parent, self.rank);
        if self.parent == Some(from) && m.rank + 1 != self.rank {
            // The parent moved; follow it, then look for something better.
            if m.rank < self.rank {
                self.rank = m.rank + 1;
                self.trickle_reset(ctx);
            } else {
                self.parent_set.remove(&from);
                self.parent_lost(ctx);
                return;
            }
        }
        self.select_parent(ctx);
        if (self.parent, self.rank) != before {
            return;
        }
        if self.is_joined() && m.rank >= self.rank.saturating_add(2) {
            self.trickle_reset(ctx);
        } else {
            self.trickle.hear_consistent();
        }
    }

    fn process_dao(&mut self, ctx: &mut Ctx<'_, RplTimer>, m: Dao, from: Address) {
        if self.is_root() {
            self.routes.update(m.originator, m.parent, m.seq);
            return;
        }
        if self.loop_detected(ctx, from) {
            return;
        }
        if self.dao_forwarded.get(&m.originator).is_some_and(|&s| !m.seq.newer_than(s)) {
            return;
        }
        self.dao_forwarded.insert(m.originator, m.seq);
        if let Some(p) = self.parent {
            self.stats.dao_forwarded += 1;
            ctx.unicast(p, RouteMsg::Dao(m));
        }
    }

    fn send_dao(&mut self, ctx: &mut Ctx<'_, RplTimer>) {
        let Some(p) = self.parent else { return };
        self.dao_seq = self.dao_seq.next();
        self.stats.dao_sent += 1;
        ctx.note(Note::DaoSent);
        ctx.unicast(p, RouteMsg::Dao(Dao { originator: self.addr, parent: p, seq: self.dao_seq }));
    }

    fn route(&mut self, ctx: &mut Ctx<'_, RplTimer>, mut pkt: DataPacket, originated: bool) {
        if pkt.dst == self.addr {
            ctx.deliver(pkt);
            return;
        }
        if let Some(route) = pkt.source_route.as_mut() {
            if route.is_empty() {
                ctx.drop_packet(pkt, Fate::NoRoute);
                return;
            }
            let next = route.remove(0);
            ctx.forward_data(next, pkt);
            return;
        }
        if self.is_root() {
            match self.routes.path_to(self.root, pkt.dst) {
                Some(path) => {
                    let next = path[1];
                    pkt.source_route = Some(path[2..].to_vec());
                    ctx.forward_data(next, pkt);
                }
                None => ctx.drop_packet(pkt, Fate::NoRoute),
            }
            return;
        }
        match self.parent {
            Some(p) => ctx.forward_data(p, pkt),
            None if originated => {
                if self.buffer.len() >= self.params.join_buffer {
                    ctx.drop_packet(pkt, Fate::BufferOverflow);
                } else {
                    self.buffer.push_back(pkt);
                }
            }
            None => ctx.drop_packet(pkt, Fate::NoRoute),
        }
    }
}

impl RoutingEngine for RplEngine {
    type Timer = RplTimer;

    fn start(&mut self, ctx: &mut Ctx<'_, RplTimer>) {
        if self.is_root() {
            self.start_interval(ctx);
        } else {
            ctx.set_timer(SimDuration::from_secs_f64(self.params.dis_interval), RplTimer::Dis);
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, RplTimer>, timer: RplTimer) {
        match timer {
            RplTimer::TrickleFire { generation } if generation == self.trickle.generation() => {
                if self.trickle.should_transmit() {
                    self.stats.dio_sent += 1;
                    ctx.note(Note::DioSent);
                    ctx.broadcast(RouteMsg::Dio(Dio { dodag_id: self.root, rank: self.rank }));
                } else {
                    self.stats.dio_suppressed += 1;
                    ctx.note(Note::DioSuppressed);
                }
            }
            RplTimer::TrickleEnd { generation } if generation == self.trickle.generation() => {
                self.trickle.expire();
                self.start_interval(ctx);
            }
            RplTimer::Dao { generation } if generation == self.dao_generation => {
                if self.is_joined() && !self.is_root() {
                    self.send_dao(ctx);
                    self.schedule_dao(ctx, SimDuration::from_secs_f64(self.params.dao_interval));
                }
            }
            RplTimer::Dis => {
                if !self.is_joined() {
                    self.stats.dis_sent += 1;
                    ctx.broadcast(RouteMsg::Dis);
                    ctx.set_timer(SimDuration::from_secs_f64(self.params.dis_interval), RplTimer::Dis);
                }
            }
            _ => {}
        }
    }

    fn on_control(&mut self, ctx: &mut Ctx<'_, RplTimer>, msg: RouteMsg, from: Address) {
        match msg {
            RouteMsg::Dio(m) => self.process_dio(ctx, m, from),
            RouteMsg::Dis => {
                if self.is_joined() {
                    self.trickle_reset(ctx);
                }
            }
            RouteMsg::Dao(m) => self.process_dao(ctx, m, from),
            _ => {}
        }
    }

    fn on_data(&mut self, ctx: &mut Ctx<'_, RplTimer>, pkt: DataPacket, from: Address) {
        if pkt.source_route.is_none() && pkt.dst == self.root {
            self.loop_detected(ctx, from);
        }
        self.route(ctx, pkt, false);
    }

    fn originate(&mut self, ctx: &mut Ctx<'_, RplTimer>, pkt: DataPacket) {
        self.route(ctx, pkt, true);
    }

    fn on_link_failure(&mut self, ctx: &mut Ctx<'_, RplTimer>, next_hop: Address, _body: &FrameBody) {
        if self.is_root() || self.parent != Some(next_hop) {
            return;
        }
        self.parent_set.remove(&next_hop);
        self.parent_lost(ctx);
    }
}
