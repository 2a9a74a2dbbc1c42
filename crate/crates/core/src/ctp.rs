//! LOADng collection tree: the root floods a trigger RREQ, every node that
//! hears it answers with one HELLO so neighbours can classify links as
//! HEARD or SYM, then a build RREQ flood installs upward routes over SYM
//! links only. With `rrep_required` each sensor also unicasts an RREP to
//! the root so the root and relays learn downward routes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{Ctx, Note, RoutingEngine};
use crate::kernel::{SimDuration, SimTime};
use crate::loadng::{LinkStatus, LoadngCore, LoadngParams, LoadngTimer, RoutingTuple};
use crate::mac::FrameBody;
use crate::messages::{Address, Hello, RouteMsg, Rreq, RreqFlags, SeqNum};
use crate::packet::DataPacket;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtpParams {
    pub net_traversal_time: f64,
    pub rreq_max_jitter: f64,
    pub hello_min_jitter: f64,
    pub hello_max_jitter: f64,
    pub rrep_required: bool,
    /// Seconds between root re-triggers; 0 disables.
    pub retrigger_interval: f64,
    /// When the root first triggers, seconds.
    pub tree_start: f64,
}

impl Default for CtpParams {
    fn default() -> Self {
        CtpParams {
            net_traversal_time: 10.0,
            rreq_max_jitter: 1.0,
            hello_min_jitter: 3.0,
            hello_max_jitter: 5.0,
            rrep_required: true,
            retrigger_interval: 0.0,
            tree_start: 0.0,
        }
    }
}

impl CtpParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.hello_min_jitter > 2.0 * self.rreq_max_jitter) {
            return Err(format!(
                "hello_min_jitter ({}) must be > 2 x rreq_max_jitter ({})",
                self.hello_min_jitter, self.rreq_max_jitter
            ));
        }
        if !(self.hello_min_jitter <= self.hello_max_jitter) {
            return Err(format!(
                "hello_min_jitter ({}) must be <= hello_max_jitter ({})",
                self.hello_min_jitter, self.hello_max_jitter
            ));
        }
        if !(self.rreq_max_jitter >= 0.0) || !(self.net_traversal_time > 0.0) {
            return Err("rreq_max_jitter must be >= 0 and net_traversal_time > 0".into());
        }
        if !(self.retrigger_interval >= 0.0) || !(self.tree_start >= 0.0) {
            return Err("retrigger_interval and tree_start must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct CtpNodeState {
    pub trigger_received: bool,
    pub build_done: bool,
    pub neighbor_status: BTreeMap<Address, LinkStatus>,
    pub root_addr: Option<Address>,
    pub trigger_seq: Option<SeqNum>,
    pub build_seq: Option<SeqNum>,
    pub upward_metric: Option<u8>,
}

impl CtpNodeState {
    fn mark_heard(&mut self, n: Address) {
        self.neighbor_status.entry(n).or_insert(LinkStatus::Heard);
    }

    fn mark_sym(&mut self, n: Address) {
        self.neighbor_status.insert(n, LinkStatus::Sym);
    }

    pub fn status(&self, n: Address) -> Option<LinkStatus> {
        self.neighbor_status.get(&n).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CtpTimer {
    Core(LoadngTimer),
    Trigger,
    Build { round: u32 },
    Hello,
    Rrep { round: SeqNum },
}

impl From<LoadngTimer> for CtpTimer {
    fn from(t: LoadngTimer) -> Self {
        CtpTimer::Core(t)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CtpStats {
    pub builds_accepted: u64,
    pub build_before_trigger: u64,
    pub build_from_heard: u64,
    pub hellos_sent: u64,
    pub fallbacks: u64,
    pub repairs: u64,
}

#[derive(Debug)]
pub struct CtpEngine {
    core: LoadngCore,
    params: CtpParams,
    root: Address,
    state: CtpNodeState,
    round: u32,
    hello_pending: bool,
    /// SYM neighbors that advertised the current build round, with the
    /// metric we would have through them.
    alternates: BTreeMap<Address, u8>,
    stats: CtpStats,
}

impl CtpEngine {
    pub fn new(addr: Address, root: Address, loadng: LoadngParams, params: CtpParams) -> Self {
        let mut core = LoadngCore::new(addr, loadng);
        core.discover_on_forward = true;
        core.persistent_toward = Some(root);
        CtpEngine {
            core,
            params,
            root,
            state: CtpNodeState::default(),
            round: 0,
            hello_pending: false,
            alternates: BTreeMap::new(),
            stats: CtpStats::default(),
        }
    }

    pub fn is_root(&self) -> bool {
        self.core.addr() == self.root
    }

    pub fn core(&self) -> &LoadngCore {
        &self.core
    }

    pub fn state(&self) -> &CtpNodeState {
        &self.state
    }

    pub fn stats(&self) -> CtpStats {
        self.stats
    }

    /// The installed tree tuple toward the root, if any.
    pub fn upward(&self) -> Option<&RoutingTuple> {
        self.core.routes().get(self.root).filter(|t| t.is_persistent())
    }

    fn secs(s: f64) -> SimDuration {
        SimDuration::from_secs_f64(s)
    }

    fn rreq_jitter(&self) -> SimDuration {
        Self::secs(self.params.rreq_max_jitter)
    }

    fn schedule_hello(&mut self, ctx: &mut Ctx<'_, CtpTimer>) {
        if self.hello_pending {
            return;
        }
        self.hello_pending = true;
        let lo = Self::secs(self.params.hello_min_jitter);
        let hi = Self::secs(self.params.hello_max_jitter);
        let d = ctx.rng.uniform_duration(lo, hi);
        ctx.set_timer(d, CtpTimer::Hello);
    }

    fn root_trigger(&mut self, ctx: &mut Ctx<'_, CtpTimer>) {
        let seq = self.core.next_seq();
        self.round += 1;
        self.state.trigger_received = true;
        self.state.trigger_seq = Some(seq);
        self.state.root_addr = Some(self.root);
        ctx.note(Note::TriggerOriginated);
        ctx.broadcast(RouteMsg::Rreq(Rreq {
            originator: self.root,
            destination: self.root,
            seq,
            hop_count: 0,
            flags: RreqFlags { trigger: true, ..RreqFlags::default() },
        }));
        let ntt = Self::secs(self.params.net_traversal_time);
        ctx.set_timer(ntt.saturating_mul(2), CtpTimer::Build { round: self.round });
        self.schedule_hello(ctx);
        if self.params.retrigger_interval > 0.0 {
            ctx.set_timer(Self::secs(self.params.retrigger_interval), CtpTimer::Trigger);
        }
    }

    fn root_build(&mut self, ctx: &mut Ctx<'_, CtpTimer>) {
        let seq = self.core.next_seq();
        self.state.build_seq = Some(seq);
        self.state.build_done = true;
        self.state.upward_metric = Some(0);
        ctx.note(Note::BuildOriginated);
        ctx.broadcast(RouteMsg::Rreq(Rreq {
            originator: self.root,
            destination: self.root,
            seq,
            hop_count: 0,
            flags: RreqFlags { trigger: false, build: true, rrep_required: self.params.rrep_required },
        }));
    }

    fn process_trigger(&mut self, ctx: &mut Ctx<'_, CtpTimer>, m: Rreq, prev_hop: Address) {
        self.state.mark_heard(prev_hop);
        if self.is_root() || m.originator == self.core.addr() {
            return;
        }
        let fresh = self.state.trigger_seq.map_or(true, |s| m.seq.newer_than(s));
        if !fresh {
            return;
        }
        self.state.trigger_received = true;
        self.state.trigger_seq = Some(m.seq);
        self.state.root_addr = Some(m.originator);
        let metric = m.hop_count.saturating_add(1);
        let reverse = RoutingTuple {
            dest: m.originator,
            next: prev_hop,
            metric,
            seq: m.seq,
            valid_until: ctx.now + Self::secs(self.core.params().route_lifetime),
            status: LinkStatus::Heard,
        };
        self.core.routes_mut().offer(reverse, ctx.now);
        let jitter = self.rreq_jitter();
        self.core.schedule_relay(ctx, Rreq { hop_count: metric, ..m }, jitter);
        self.schedule_hello(ctx);
    }

    fn process_hello(&mut self, h: Hello, prev_hop: Address) {
        if h.neighbors.contains(&self.core.addr()) {
            self.state.mark_sym(prev_hop);
        } else {
            self.state.mark_heard(prev_hop);
        }
    }

    fn process_build(&mut self, ctx: &mut Ctx<'_, CtpTimer>, m: Rreq, prev_hop: Address) {
        if self.is_root() || m.originator == self.core.addr() {
            return;
        }
        if !self.state.trigger_received {
            self.stats.build_before_trigger += 1;
            ctx.note(Note::BuildBeforeTrigger);
            return;
        }
        if self.state.status(prev_hop) != Some(LinkStatus::Sym) {
            self.stats.build_from_heard += 1;
            ctx.note(Note::BuildFromHeardDiscarded);
            return;
        }
        let metric = m.hop_count.saturating_add(1);
        let new_round = self.state.build_seq.map_or(true, |s| m.seq.newer_than(s));
        let same_round = self.state.build_seq == Some(m.seq);
        let better = self.state.upward_metric.map_or(true, |old| metric < old);
        if new_round {
            self.alternates.clear();
        }
        if new_round || same_round {
            self.alternates.insert(prev_hop, metric);
        }
        let accept = new_round || (same_round && (!self.state.build_done || better));
        if !accept {
            return;
        }
        let first_of_round = new_round || !self.state.build_done;
        self.stats.builds_accepted += 1;
        self.state.build_seq = Some(m.seq);
        self.state.upward_metric = Some(metric);
        self.state.build_done = true;
        self.state.root_addr = Some(m.originator);
        self.core.routes_mut().insert(RoutingTuple {
            dest: m.originator,
            next: prev_hop,
            metric,
            seq: m.seq,
            valid_until: SimTime::MAX,
            status: LinkStatus::Sym,
        });
        self.core.flush_pending(ctx, m.originator);
        let jitter = self.rreq_jitter();
        let rrep = m.flags.rrep_required;
        self.core.schedule_relay(ctx, Rreq { hop_count: metric, ..m }, jitter);
        if rrep && first_of_round {
            let d = ctx.jitter(jitter);
            ctx.set_timer(d, CtpTimer::Rrep { round: m.seq });
        }
    }

    /// Switch to another neighbor of the same build round whose metric is
    /// no worse than the lost one; such a neighbor cannot be our descendant.
    fn repair(&mut self, ctx: &mut Ctx<'_, CtpTimer>) -> bool {
        let (Some(old), Some(seq)) = (self.state.upward_metric, self.state.build_seq) else {
            return false;
        };
        let Some((&next, &metric)) =
            self.alternates.iter().filter(|(_, &m)| m <= old).min_by_key(|(&a, &m)| (m, a))
        else {
            return false;
        };
        self.state.upward_metric = Some(metric);
        self.core.routes_mut().insert(RoutingTuple {
            dest: self.root,
            next,
            metric,
            seq,
            valid_until: SimTime::MAX,
            status: LinkStatus::Sym,
        });
        self.stats.repairs += 1;
        ctx.note(Note::TreeRepaired);
        self.core.flush_pending(ctx, self.root);
        true
    }

    fn tree_lost_check(&mut self, ctx: &mut Ctx<'_, CtpTimer>) {
        if self.state.build_done && !self.is_root() && self.upward().is_none() && !self.repair(ctx) {
            self.state.build_done = false;
            self.state.upward_metric = None;
            ctx.note(Note::TreeRouteLost);
        }
    }
}

impl RoutingEngine for CtpEngine {
    type Timer = CtpTimer;

    fn start(&mut self, ctx: &mut Ctx<'_, CtpTimer>) {
        if self.is_root() {
            ctx.set_timer(Self::secs(self.params.tree_start), CtpTimer::Trigger);
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, CtpTimer>, timer: CtpTimer) {
        self.core.expire_routes(ctx.now);
        match timer {
            CtpTimer::Core(t) => self.core.on_timer(ctx, t),
            CtpTimer::Trigger => self.root_trigger(ctx),
            CtpTimer::Build { round } => {
                if round == self.round {
                    self.root_build(ctx);
                }
            }
            CtpTimer::Hello => {
                self.hello_pending = false;
                self.stats.hellos_sent += 1;
                let neighbors = self.state.neighbor_status.keys().copied().collect();
                ctx.broadcast(RouteMsg::Hello(Hello { originator: self.core.addr(), neighbors }));
            }
            CtpTimer::Rrep { round } => {
                if self.state.build_seq == Some(round) && self.upward().is_some() {
                    ctx.note(Note::RrepPathStarted);
                    self.core.send_rrep_to(ctx, self.root);
                }
            }
        }
    }

    fn on_control(&mut self, ctx: &mut Ctx<'_, CtpTimer>, msg: RouteMsg, from: Address) {
        self.core.expire_routes(ctx.now);
        match msg {
            RouteMsg::Rreq(m) if m.flags.trigger => self.process_trigger(ctx, m, from),
            RouteMsg::Rreq(m) if m.flags.build => self.process_build(ctx, m, from),
            RouteMsg::Hello(h) => self.process_hello(h, from),
            other => {
                self.core.on_control(ctx, other, from);
                self.tree_lost_check(ctx);
            }
        }
    }

    fn on_data(&mut self, ctx: &mut Ctx<'_, CtpTimer>, pkt: DataPacket, from: Address) {
        self.core.expire_routes(ctx.now);
        // Upward traffic arriving from our own tree next hop means that
        // neighbour now routes through us.
        if pkt.dst == self.root && self.upward().is_some_and(|t| t.next == from) {
            self.core.routes_mut().invalidate(self.root, from);
            self.alternates.remove(&from);
            self.tree_lost_check(ctx);
        }
        if pkt.dst != self.core.addr() && !self.core.has_valid_route(pkt.dst, ctx.now) {
            self.stats.fallbacks += 1;
            ctx.note(Note::FallbackDiscovery);
        }
        self.core.route_data(ctx, pkt, false);
    }

    fn originate(&mut self, ctx: &mut Ctx<'_, CtpTimer>, pkt: DataPacket) {
        self.core.expire_routes(ctx.now);
        if pkt.dst != self.core.addr() && !self.core.has_valid_route(pkt.dst, ctx.now) {
            self.stats.fallbacks += 1;
            ctx.note(Note::FallbackDiscovery);
        }
        self.core.route_data(ctx, pkt, true);
    }

    fn on_link_failure(&mut self, ctx: &mut Ctx<'_, CtpTimer>, next_hop: Address, body: &FrameBody) {
        self.core.handle_broken_link(ctx, next_hop, body);
        if self.upward().is_none() {
            self.alternates.remove(&next_hop);
        }
        self.tree_lost_check(ctx);
    }

    fn on_link_ok(&mut self, _ctx: &mut Ctx<'_, CtpTimer>, next_hop: Address) {
        self.core.link_ok(next_hop);
    }
}
