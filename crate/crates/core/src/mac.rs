//! Always-on CSMA MAC: bounded FIFO, carrier sense with binary exponential
//! backoff, idealized link-layer acks and bounded unicast retransmission.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::kernel::{RandomStream, SimDuration, SimTime};
use crate::messages::{Address, RouteMsg};
use crate::packet::DataPacket;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacParams {
    pub max_retries: u32,
    /// Seconds.
    pub backoff_unit: f64,
    pub max_backoff_exponent: u32,
    pub queue_capacity: usize,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams { max_retries: 3, backoff_unit: 0.00032, max_backoff_exponent: 5, queue_capacity: 8 }
    }
}

impl MacParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.queue_capacity < 1 {
            return Err("mac.queue_capacity must be >= 1".into());
        }
        if !(self.backoff_unit > 0.0) {
            return Err(format!("mac.backoff_unit must be > 0 (got {})", self.backoff_unit));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FrameBody {
    Control(RouteMsg),
    Data(DataPacket),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub src: Address,
    /// Next hop, or [`Address::BROADCAST`].
    pub dst: Address,
    pub payload_bytes: usize,
    pub body: FrameBody,
    pub enqueue_time: SimTime,
}

impl Frame {
    pub fn is_broadcast(&self) -> bool {
        self.dst.is_broadcast()
    }

    pub fn is_control(&self) -> bool {
        matches!(self.body, FrameBody::Control(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MacState {
    Idle,
    /// An attempt event is pending.
    Waiting,
    Transmitting,
}

/// What the caller must do after a MAC state transition.
#[derive(Debug, PartialEq)]
pub enum MacStep {
    /// Schedule another channel-access attempt after the delay.
    Backoff(SimDuration),
    /// Put the head-of-line frame on the air now.
    Transmit,
}

#[derive(Debug, PartialEq)]
pub enum TxResult {
    /// Broadcast sent, or unicast acknowledged.
    Sent(Frame),
    /// Unicast exhausted its retries.
    GaveUp(Frame),
    /// Unicast failed; retry after the backoff.
    Retry(SimDuration),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MacStats {
    pub enqueued: u64,
    pub sent_ok: u64,
    pub queue_drops: u64,
    pub gave_up: u64,
    /// Frames discarded because the node failed.
    pub flushed: u64,
    pub transmissions: u64,
}

#[derive(Debug)]
pub struct Mac {
    params: MacParams,
    backoff_unit: SimDuration,
    queue: VecDeque<Frame>,
    state: MacState,
    busy_count: u32,
    tx_count: u32,
    stats: MacStats,
}

impl Mac {
    pub fn new(params: MacParams) -> Self {
        let backoff_unit = SimDuration::from_secs_f64(params.backoff_unit);
        Mac {
            params,
            backoff_unit,
            queue: VecDeque::new(),
            state: MacState::Idle,
            busy_count: 0,
            tx_count: 0,
            stats: MacStats::default(),
        }
    }

    pub fn stats(&self) -> MacStats {
        self.stats
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn head(&self) -> Option<&Frame> {
        self.queue.front()
    }

    /// Queue a frame. `Ok(true)` means the MAC was idle and the caller must
    /// schedule an attempt now; `Err` hands back a frame dropped on overflow.
    pub fn enqueue(&mut self, frame: Frame) -> Result<bool, Frame> {
        if self.queue.len() >= self.params.queue_capacity {
            self.stats.queue_drops += 1;
            return Err(frame);
        }
        self.stats.enqueued += 1;
        self.queue.push_back(frame);
        if self.state == MacState::Idle {
            self.state = MacState::Waiting;
            self.busy_count = 0;
            self.tx_count = 0;
            return Ok(true);
        }
        Ok(false)
    }

    fn backoff(&self, slot: SimDuration, exponent: u32, rng: &mut RandomStream) -> SimDuration {
        let e = exponent.min(self.params.max_backoff_exponent);
        let hi = slot.saturating_mul(1u64 << e);
        rng.uniform_duration(SimDuration::ZERO, hi)
    }

    /// Channel-access attempt for the head-of-line frame.
    pub fn attempt(&mut self, medium_busy: bool, rng: &mut RandomStream) -> MacStep {
        debug_assert_eq!(self.state, MacState::Waiting);
        debug_assert!(!self.queue.is_empty());
        if medium_busy {
            self.busy_count += 1;
            return MacStep::Backoff(self.backoff(self.backoff_unit, self.busy_count, rng));
        }
        self.state = MacState::Transmitting;
        self.tx_count += 1;
        self.stats.transmissions += 1;
        MacStep::Transmit
    }

    /// Whether the head frame was just transmitted for the first time.
    pub fn is_first_attempt(&self) -> bool {
        self.tx_count == 1
    }

    /// Transmission of the head frame finished; `acked` is meaningful for
    /// unicast frames only. Retransmissions back off in slots of at least
    /// one frame airtime, so two hidden senders that just collided do not
    /// collide again on every retry.
    pub fn transmission_done(&mut self, acked: bool, airtime: SimDuration, rng: &mut RandomStream) -> TxResult {
        debug_assert_eq!(self.state, MacState::Transmitting);
        let broadcast = self.queue.front().is_some_and(Frame::is_broadcast);
        if broadcast || acked {
            self.stats.sent_ok += 1;
            return TxResult::Sent(self.pop_head());
        }
        if self.tx_count <= self.params.max_retries {
            self.state = MacState::Waiting;
            let slot = self.backoff_unit.max(airtime);
            return TxResult::Retry(self.backoff(slot, self.tx_count, rng));
        }
        self.stats.gave_up += 1;
        TxResult::GaveUp(self.pop_head())
    }

    fn pop_head(&mut self) -> Frame {
        let f = self.queue.pop_front().expect("head frame");
        self.busy_count = 0;
        self.tx_count = 0;
        self.state = if self.queue.is_empty() { MacState::Idle } else { MacState::Waiting };
        f
    }

    /// After a pop, whether another attempt must be scheduled.
    pub fn has_pending(&self) -> bool {
        self.state == MacState::Waiting
    }

    /// Drop everything (node failure).
    pub fn flush(&mut self) -> Vec<Frame> {
        self.stats.flushed += self.queue.len() as u64;
        self.state = MacState::Idle;
        self.busy_count = 0;
        self.tx_count = 0;
        self.queue.drain(..).collect()
    }

    pub fn is_transmitting(&self) -> bool {
        self.state == MacState::Transmitting
    }

    /// `enqueued == sent_ok + gave_up + flushed + in_queue`.
    pub fn conserves(&self) -> bool {
        let s = self.stats;
        s.enqueued == s.sent_ok + s.gave_up + s.flushed + self.queue.len() as u64
    }
}
