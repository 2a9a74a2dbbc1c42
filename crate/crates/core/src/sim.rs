//! The simulator proper: wires engines, MACs and the shared channel to the
//! event queue, drives application traffic and records metrics.

use std::collections::BTreeMap;

use crate::engine::{data_frame_bytes, Action, Ctx, Note, RoutingEngine};
use crate::kernel::{Event, EventQueue, RandomStream, SimDuration, SimError, SimTime, TRAFFIC_STREAM};
use crate::mac::{Frame, FrameBody, Mac, MacParams, MacStats, MacStep, TxResult};
use crate::messages::{Address, MsgKind, RouteMsg};
use crate::metrics::{Fate, MetricsCollector};
use crate::packet::{AppKind, DataPacket, Direction, MAX_HOPS};
use crate::radio::{Channel, Position, RadioParams, LINK_HEADER_BYTES};
use crate::scenario::TrafficProfile;

#[derive(Debug)]
enum SimEvent<T> {
    Start { node: Address },
    Timer { node: Address, timer: T },
    MacAttempt { node: Address },
    TxEnd { node: Address, tx: u64 },
    Report { client: Address },
    Config { client: Address },
    AppSend { src: Address, dst: Address, kind: AppKind, bytes: usize },
    Inject { src: Address, dst: Address, bytes: usize },
    Fail { node: Address },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TxRecord {
    pub at: SimTime,
    pub node: Address,
    pub dst: Address,
    /// `None` for data frames.
    pub msg: Option<RouteMsg>,
    pub payload_bytes: usize,
    pub first_attempt: bool,
}

impl TxRecord {
    pub fn kind(&self) -> Option<MsgKind> {
        self.msg.as_ref().map(RouteMsg::kind)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RxRecord {
    pub at: SimTime,
    pub node: Address,
    pub from: Address,
    pub msg: Option<RouteMsg>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoteRecord {
    pub at: SimTime,
    pub node: Address,
    pub note: Note,
}

#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub tx: Vec<TxRecord>,
    pub rx: Vec<RxRecord>,
    pub notes: Vec<NoteRecord>,
}

struct NodeSlot<E> {
    engine: E,
    mac: Mac,
    rng: RandomStream,
    alive: bool,
}

struct TrafficSetup {
    profile: TrafficProfile,
    report_period: SimDuration,
    config_period: SimDuration,
}

/// Everything a finished run hands back.
#[derive(Debug)]
pub struct RunOutcome {
    pub metrics: MetricsCollector,
    pub notes: BTreeMap<Note, u64>,
    pub trace: Option<Trace>,
    pub mac: MacStats,
    pub collisions: u64,
    pub control_frames_dropped: u64,
    pub end: SimTime,
}

pub struct Simulation<E: RoutingEngine> {
    queue: EventQueue<SimEvent<E::Timer>>,
    channel: Channel,
    radio: RadioParams,
    nodes: Vec<NodeSlot<E>>,
    concentrator: Address,
    traffic: Option<TrafficSetup>,
    metrics: MetricsCollector,
    notes: BTreeMap<Note, u64>,
    trace: Option<Trace>,
    next_tx: u64,
    control_frames_dropped: u64,
    actions: Vec<Action<E::Timer>>,
    seed: u64,
}

impl<E: RoutingEngine> Simulation<E> {
    /// One engine per position; node `i` gets address `i`.
    pub fn new(positions: &[Position], radio: RadioParams, mac: MacParams, seed: u64, engines: Vec<E>, concentrator: Address) -> Self {
        assert_eq!(positions.len(), engines.len(), "one engine per node");
        assert!(positions.len() < u16::MAX as usize, "too many nodes");
        let nodes = engines
            .into_iter()
            .enumerate()
            .map(|(i, engine)| NodeSlot {
                engine,
                mac: Mac::new(mac.clone()),
                rng: RandomStream::new(seed, i as u64),
                alive: true,
            })
            .collect::<Vec<_>>();
        let mut queue = EventQueue::new();
        for i in 0..nodes.len() {
            queue.schedule_in(SimDuration::ZERO, SimEvent::Start { node: Address(i as u16) });
        }
        Simulation {
            queue,
            channel: Channel::new(positions, radio.clone()),
            radio,
            nodes,
            concentrator,
            traffic: None,
            metrics: MetricsCollector::new(),
            notes: BTreeMap::new(),
            trace: None,
            next_tx: 0,
            control_frames_dropped: 0,
            actions: Vec::new(),
            seed,
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Trace::default);
    }

    /// Start AMI traffic. Per-client phases come from a dedicated stream so
    /// the offered load does not depend on the backend.
    pub fn set_traffic(&mut self, profile: TrafficProfile) {
        let report_period = SimDuration::from_secs_f64(profile.report_period);
        let config_period = SimDuration::from_secs_f64(profile.config_period);
        let mut rng = RandomStream::new(self.seed, TRAFFIC_STREAM);
        for i in 0..self.nodes.len() {
            let client = Address(i as u16);
            if client == self.concentrator {
                continue;
            }
            let report = rng.uniform_duration(SimDuration::ZERO, SimDuration::from_micros(report_period.as_micros() - 1));
            let config = rng.uniform_duration(SimDuration::ZERO, SimDuration::from_micros(config_period.as_micros() - 1));
            self.queue.schedule_in(report, SimEvent::Report { client });
            self.queue.schedule_in(config, SimEvent::Config { client });
        }
        self.traffic = Some(TrafficSetup { profile, report_period, config_period });
    }

    /// Hand a probe packet to `src` at `at`.
    pub fn inject(&mut self, at: SimTime, src: Address, dst: Address, bytes: usize) -> Result<(), SimError> {
        self.queue.schedule(at, SimEvent::Inject { src, dst, bytes }).map(|_| ())
    }

    /// Permanently silence `node` at `at`.
    pub fn schedule_failure(&mut self, at: SimTime, node: Address) -> Result<(), SimError> {
        self.queue.schedule(at, SimEvent::Fail { node }).map(|_| ())
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn engine(&self, node: Address) -> &E {
        &self.nodes[node.index()].engine
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn metrics(&self) -> &MetricsCollector {
        &self.metrics
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }

    pub fn note_count(&self, note: Note) -> u64 {
        self.notes.get(&note).copied().unwrap_or(0)
    }

    pub fn run_until(&mut self, t_end: SimTime) -> Result<(), SimError> {
        while let Some(ev) = self.queue.pop_due(t_end) {
            self.handle(ev)?;
        }
        self.queue.advance_to(t_end);
        Ok(())
    }

    /// Settle in-flight packets and check conservation.
    pub fn finish(mut self) -> Result<RunOutcome, SimError> {
        self.metrics.finish();
        let mut mac = MacStats::default();
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.mac.conserves() {
                return Err(SimError::Aborted(format!("MAC conservation violated at node {i}: {:?}", n.mac.stats())));
            }
            let s = n.mac.stats();
            mac.enqueued += s.enqueued;
            mac.sent_ok += s.sent_ok;
            mac.queue_drops += s.queue_drops;
            mac.gave_up += s.gave_up;
            mac.flushed += s.flushed;
            mac.transmissions += s.transmissions;
        }
        if self.metrics.fate_violations() > 0 {
            return Err(SimError::Aborted(format!("{} packets settled twice", self.metrics.fate_violations())));
        }
        for dir in [Direction::Upward, Direction::Downward] {
            let c = self.metrics.fate_counts(dir, SimTime::ZERO);
            if !c.conserved() {
                return Err(SimError::Aborted(format!("packet conservation violated ({dir:?}): {c:?}")));
            }
        }
        Ok(RunOutcome {
            metrics: self.metrics,
            notes: self.notes,
            trace: self.trace,
            mac,
            collisions: self.channel.collision_count(),
            control_frames_dropped: self.control_frames_dropped,
            end: self.queue.now(),
        })
    }

    fn handle(&mut self, ev: Event<SimEvent<E::Timer>>) -> Result<(), SimError> {
        match ev.payload {
            SimEvent::Start { node } => {
                if self.alive(node) {
                    self.with_engine(node, |e, ctx| e.start(ctx));
                }
            }
            SimEvent::Timer { node, timer } => {
                if self.alive(node) {
                    self.with_engine(node, |e, ctx| e.on_timer(ctx, timer));
                }
            }
            SimEvent::MacAttempt { node } => self.mac_attempt(node),
            SimEvent::TxEnd { node, tx } => self.tx_end(node, tx),
            SimEvent::Report { client } => {
                let (bytes, period) = match &self.traffic {
                    Some(t) => (t.profile.report_bytes, t.report_period),
                    None => return Ok(()),
                };
                if self.alive(client) {
                    self.app_send(client, self.concentrator, AppKind::Report, bytes);
                    self.queue.schedule_in(period, SimEvent::Report { client });
                }
            }
            SimEvent::Config { client } => {
                let (bytes, period) = match &self.traffic {
                    Some(t) => (t.profile.config_bytes, t.config_period),
                    None => return Ok(()),
                };
                if self.alive(self.concentrator) {
                    self.app_send(self.concentrator, client, AppKind::Config, bytes);
                    self.queue.schedule_in(period, SimEvent::Config { client });
                }
            }
            SimEvent::AppSend { src, dst, kind, bytes } => {
                if self.alive(src) {
                    self.app_send(src, dst, kind, bytes);
                }
            }
            SimEvent::Inject { src, dst, bytes } => {
                if self.alive(src) {
                    self.app_send(src, dst, AppKind::Probe, bytes);
                }
            }
            SimEvent::Fail { node } => self.fail(node),
        }
        Ok(())
    }

    fn alive(&self, node: Address) -> bool {
        self.nodes[node.index()].alive
    }

    fn direction(&self, dst: Address) -> Direction {
        if dst == self.concentrator {
            Direction::Upward
        } else {
            Direction::Downward
        }
    }

    fn app_send(&mut self, src: Address, dst: Address, kind: AppKind, bytes: usize) {
        let now = self.queue.now();
        let pkt = self.metrics.create(src, dst, self.direction(dst), kind, bytes, now);
        self.with_engine(src, |e, ctx| e.originate(ctx, pkt));
    }

    fn fail(&mut self, node: Address) {
        let now = self.queue.now();
        let slot = &mut self.nodes[node.index()];
        if !slot.alive {
            return;
        }
        slot.alive = false;
        self.channel.set_alive(node, false);
        for f in slot.mac.flush() {
            if let FrameBody::Data(p) = f.body {
                self.metrics.drop(p.id, Fate::MacDrop, now);
            }
        }
    }

    fn with_engine(&mut self, node: Address, f: impl FnOnce(&mut E, &mut Ctx<'_, E::Timer>)) {
        let now = self.queue.now();
        let mut actions = std::mem::take(&mut self.actions);
        {
            let slot = &mut self.nodes[node.index()];
            let mut ctx = Ctx::new(now, node, &mut slot.rng, &mut actions);
            f(&mut slot.engine, &mut ctx);
        }
        for a in actions.drain(..) {
            self.apply(node, a);
        }
        self.actions = actions;
    }

    fn apply(&mut self, node: Address, action: Action<E::Timer>) {
        let now = self.queue.now();
        match action {
            Action::Send { next_hop, body } => {
                let payload_bytes = match &body {
                    FrameBody::Control(m) => m.encoded_size(),
                    FrameBody::Data(p) => data_frame_bytes(p),
                };
                let frame = Frame { src: node, dst: next_hop, payload_bytes, body, enqueue_time: now };
                match self.nodes[node.index()].mac.enqueue(frame) {
                    Ok(true) => {
                        self.queue.schedule_in(SimDuration::ZERO, SimEvent::MacAttempt { node });
                    }
                    Ok(false) => {}
                    Err(f) => match f.body {
                        FrameBody::Data(p) => self.metrics.drop(p.id, Fate::MacDrop, now),
                        FrameBody::Control(_) => self.control_frames_dropped += 1,
                    },
                }
            }
            Action::Timer { delay, timer } => {
                self.queue.schedule_in(delay, SimEvent::Timer { node, timer });
            }
            Action::Deliver(pkt) => {
                self.metrics.deliver(pkt.id, now);
                self.app_reply(node, &pkt);
            }
            Action::Drop(pkt, fate) => self.metrics.drop(pkt.id, fate, now),
            Action::Note(note) => {
                *self.notes.entry(note).or_default() += 1;
                if let Some(t) = self.trace.as_mut() {
                    t.notes.push(NoteRecord { at: now, node, note });
                }
            }
        }
    }

    /// Application-level acknowledgements of delivered frames.
    fn app_reply(&mut self, node: Address, pkt: &DataPacket) {
        let Some(t) = &self.traffic else { return };
        let reply = match pkt.kind {
            AppKind::Report if node == self.concentrator => Some((AppKind::DownwardAck, t.profile.downward_ack_bytes)),
            AppKind::DownwardAck | AppKind::Config if node != self.concentrator => {
                Some((AppKind::UpwardAck, t.profile.upward_ack_bytes))
            }
            _ => None,
        };
        if let Some((kind, bytes)) = reply {
            self.queue
                .schedule_in(SimDuration::ZERO, SimEvent::AppSend { src: node, dst: pkt.src, kind, bytes });
        }
    }

    fn mac_attempt(&mut self, node: Address) {
        let now = self.queue.now();
        if !self.alive(node) {
            return;
        }
        let busy = self.channel.is_busy(node);
        let slot = &mut self.nodes[node.index()];
        match slot.mac.attempt(busy, &mut slot.rng) {
            MacStep::Backoff(d) => {
                self.queue.schedule_in(d, SimEvent::MacAttempt { node });
            }
            MacStep::Transmit => {
                let first_attempt = slot.mac.is_first_attempt();
                let frame = slot.mac.head().expect("head frame");
                let tx = self.next_tx;
                self.next_tx += 1;
                let airtime = self.radio.airtime(frame.payload_bytes);
                if let FrameBody::Control(m) = &frame.body {
                    self.metrics.control_tx(m.kind(), frame.payload_bytes + LINK_HEADER_BYTES);
                }
                if let Some(t) = self.trace.as_mut() {
                    t.tx.push(TxRecord {
                        at: now,
                        node,
                        dst: frame.dst,
                        msg: match &frame.body {
                            FrameBody::Control(m) => Some(m.clone()),
                            FrameBody::Data(_) => None,
                        },
                        payload_bytes: frame.payload_bytes,
                        first_attempt,
                    });
                }
                self.channel.begin_transmission(tx, node);
                self.queue.schedule_in(airtime, SimEvent::TxEnd { node, tx });
            }
        }
    }

    fn tx_end(&mut self, node: Address, tx: u64) {
        let outcomes = self.channel.end_transmission(tx, node);
        if !self.alive(node) {
            return;
        }
        let (dst, broadcast, airtime) = {
            let head = self.nodes[node.index()].mac.head().expect("transmitting frame");
            (head.dst, head.is_broadcast(), self.radio.airtime(head.payload_bytes))
        };
        let mut receivers = Vec::new();
        for o in outcomes {
            if !o.clean || (!broadcast && o.receiver != dst) {
                continue;
            }
            if self.nodes[o.receiver.index()].rng.chance(o.p_rx) {
                receivers.push(o.receiver);
            }
        }
        let acked = !broadcast && receivers.contains(&dst);
        let slot = &mut self.nodes[node.index()];
        match slot.mac.transmission_done(acked, airtime, &mut slot.rng) {
            TxResult::Sent(frame) => {
                if slot.mac.has_pending() {
                    self.queue.schedule_in(SimDuration::ZERO, SimEvent::MacAttempt { node });
                }
                if acked {
                    self.with_engine(node, |e, ctx| e.on_link_ok(ctx, dst));
                }
                for r in receivers {
                    self.dispatch(r, node, frame.body.clone());
                }
            }
            TxResult::Retry(d) => {
                self.queue.schedule_in(d, SimEvent::MacAttempt { node });
            }
            TxResult::GaveUp(frame) => {
                if slot.mac.has_pending() {
                    self.queue.schedule_in(SimDuration::ZERO, SimEvent::MacAttempt { node });
                }
                if let FrameBody::Data(p) = &frame.body {
                    self.metrics.drop(p.id, Fate::MacDrop, self.queue.now());
                }
                self.with_engine(node, |e, ctx| e.on_link_failure(ctx, frame.dst, &frame.body));
            }
        }
    }

    fn dispatch(&mut self, receiver: Address, from: Address, body: FrameBody) {
        if let Some(t) = self.trace.as_mut() {
            t.rx.push(RxRecord {
                at: self.queue.now(),
                node: receiver,
                from,
                msg: match &body {
                    FrameBody::Control(m) => Some(m.clone()),
                    FrameBody::Data(_) => None,
                },
            });
        }
        match body {
            FrameBody::Control(m) => self.with_engine(receiver, |e, ctx| e.on_control(ctx, m, from)),
            FrameBody::Data(mut p) => {
                p.hops = p.hops.saturating_add(1);
                if p.hops > MAX_HOPS {
                    self.metrics.drop(p.id, Fate::NoRoute, self.queue.now());
                } else {
                    self.with_engine(receiver, |e, ctx| e.on_data(ctx, p, from));
                }
            }
        }
    }
}
