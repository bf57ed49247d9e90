//! Event queue, simulation clock and seeded random streams.
//!
//! Events are dispatched in `(time, seq)` order where `seq` is the
//! scheduling counter, so events at equal times keep their scheduling order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use thiserror::Error;

use crate::matching::{AgentId, OrderId};

/// Simulation time per second (one unit is a tenth of a second).
pub const UNITS_PER_SECOND: f64 = 10.0;
/// Twenty hours of trading.
pub const FULL_HORIZON: f64 = 720_000.0;
pub const UNITS_PER_HOUR: f64 = 36_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionTag {
    MakerUpdate,
    TakerStart,
    TakerChunk,
    TrendLimit,
    TrendMarket,
    NoiseLimit,
    NoiseMarket,
    NoiseCancel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    AgentWakeup { agent: AgentId, tag: ActionTag },
    OrderExpiry { order_id: OrderId },
    FundamentalStep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("event at {at} scheduled in the past (now = {now})")]
    InThePast { at: f64, now: f64 },
    #[error("event time is not finite")]
    NotFinite,
}

/// Clock plus pending-event queue.
#[derive(Debug)]
pub struct Scheduler {
    now: f64,
    horizon: f64,
    next_seq: u64,
    queue: BinaryHeap<SimEvent>,
}

impl Scheduler {
    pub fn new(start: f64, horizon: f64) -> Scheduler {
        Scheduler { now: start, horizon, next_seq: 0, queue: BinaryHeap::new() }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind) -> Result<u64, ScheduleError> {
        if !time.is_finite() {
            return Err(ScheduleError::NotFinite);
        }
        if time < self.now {
            return Err(ScheduleError::InThePast { at: time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(SimEvent { time, seq, kind });
        Ok(seq)
    }

    /// Pops the next event at or before the horizon and advances the clock.
    pub fn next_event(&mut self) -> Option<SimEvent> {
        let head = self.queue.peek()?;
        if head.time > self.horizon {
            return None;
        }
        let ev = self.queue.pop().expect("peeked");
        self.now = ev.time;
        Some(ev)
    }
}

/// A reproducible random stream identified by `(master_seed, substream)`.
///
/// Each agent owns one stream, so its draws never depend on how many draws
/// other agents have made.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, substream: u64) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(substream);
        RngStream { rng }
    }

    /// Exponential draw with the given mean.
    pub fn exponential(&mut self, mean: f64) -> f64 {
        let e: f64 = self.rng.sample(Exp1);
        mean * e
    }

    /// Untruncated normal draw.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        if std == 0.0 {
            return mean;
        }
        let z: f64 = self.rng.sample(StandardNormal);
        mean + std * z
    }

    pub fn coin(&mut self) -> bool {
        self.rng.random::<bool>()
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.rng.random_range(0..len)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

/// splitmix64 finalizer; derives per-run seeds from a master seed.
pub fn mix_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
