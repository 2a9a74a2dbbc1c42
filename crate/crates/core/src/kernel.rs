//! Discrete-event kernel: integer microsecond clock, a `(fire_at, seq)`
//! ordered event queue and seeded per-node random substreams.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const MICROS_PER_SEC: f64 = 1_000_000.0;

/// Absolute simulation time in microseconds since start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

/// Non-negative span of simulation time in microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimDuration(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime(secs_to_micros(secs))
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC
    }

    /// Time elapsed since `earlier`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub const fn from_micros(us: u64) -> Self {
        SimDuration(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimDuration(ms * 1000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimDuration(s * 1_000_000)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        SimDuration(secs_to_micros(secs))
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC
    }

    pub fn saturating_mul(self, k: u64) -> Self {
        SimDuration(self.0.saturating_mul(k))
    }
}

fn secs_to_micros(secs: f64) -> u64 {
    assert!(secs.is_finite() && secs >= 0.0, "negative or non-finite time: {secs}");
    (secs * MICROS_PER_SEC).round() as u64
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign<SimDuration> for SimTime {
    fn add_assign(&mut self, rhs: SimDuration) {
        *self = *self + rhs;
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0.saturating_add(rhs.0))
    }
}

impl Sub for SimTime {
    type Output = SimDuration;
    fn sub(self, rhs: SimTime) -> SimDuration {
        self.since(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled in the past: fire_at={fire_at} < now={now}")]
    ScheduledInPast { fire_at: SimTime, now: SimTime },
    #[error("run aborted: {0}")]
    Aborted(String),
}

/// A queued event. `seq` is the queue's insertion counter and breaks ties
/// between events with the same `fire_at`.
#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub payload: P,
}

struct Entry<P> {
    key: Reverse<(SimTime, u64)>,
    payload: P,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl<P> Eq for Entry<P> {}
impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Entry<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

/// Event queue plus virtual clock.
pub struct EventQueue<P> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<P>>,
    last_popped: (SimTime, u64),
    processed: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            last_popped: (SimTime::ZERO, 0),
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Number of events handed out by [`EventQueue::pop_due`] so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Enqueue `payload` at the absolute time `fire_at`.
    pub fn schedule(&mut self, fire_at: SimTime, payload: P) -> Result<u64, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduledInPast { fire_at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { key: Reverse((fire_at, seq)), payload });
        Ok(seq)
    }

    /// Enqueue `payload` after `delay`; never fails.
    pub fn schedule_in(&mut self, delay: SimDuration, payload: P) -> u64 {
        let at = self.now + delay;
        self.schedule(at, payload).expect("relative schedule cannot be in the past")
    }

    /// Pop the next event if it fires no later than `t_end`, advancing the clock.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<Event<P>> {
        let due = matches!(self.heap.peek(), Some(e) if e.key.0 .0 <= t_end);
        if !due {
            return None;
        }
        let Entry { key: Reverse((fire_at, seq)), payload } = self.heap.pop()?;
        debug_assert!(
            (fire_at, seq) > self.last_popped || self.processed == 0,
            "event order violated"
        );
        debug_assert!(fire_at >= self.now, "clock would move backwards");
        self.last_popped = (fire_at, seq);
        self.now = fire_at;
        self.processed += 1;
        Some(Event { fire_at, seq, payload })
    }

    /// Advance the clock to `t` once nothing earlier remains.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Process every event with `fire_at <= t_end` through `handler`, then
    /// leave the clock at `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<(), SimError>
    where
        F: FnMut(&mut EventQueue<P>, Event<P>) -> Result<(), SimError>,
    {
        while let Some(ev) = self.pop_due(t_end) {
            handler(self, ev)?;
        }
        self.advance_to(t_end);
        Ok(())
    }
}

/// Stream index reserved for application traffic phases.
pub const TRAFFIC_STREAM: u64 = u64::MAX - 1;
/// Stream index reserved for topology placement.
pub const TOPOLOGY_STREAM: u64 = u64::MAX - 2;

/// Seeded pseudo-random substream. Streams with the same seed but different
/// indices are independent.
#[derive(Clone, Debug)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomStream { rng }
    }

    /// Uniform draw in seconds from `[lo, hi]`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        assert!(lo <= hi, "uniform: lo {lo} > hi {hi}");
        if lo == hi {
            return lo;
        }
        lo + (hi - lo) * self.rng.gen::<f64>()
    }

    /// Uniform draw of an integer tick count from `[lo, hi]`.
    pub fn uniform_duration(&mut self, lo: SimDuration, hi: SimDuration) -> SimDuration {
        assert!(lo <= hi, "uniform_duration: lo > hi");
        SimDuration(self.rng.gen_range(lo.0..=hi.0))
    }

    /// Bernoulli trial with success probability `p`.
    pub fn chance(&mut self, p: f64) -> bool {
        if p >= 1.0 {
            return true;
        }
        if p <= 0.0 {
            return false;
        }
        self.rng.gen::<f64>() < p
    }

    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}
