//! Discrete-event core: simulation clock, cancellable event queue and
//! labeled deterministic random-number substreams.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::SimError;

/// Simulated time in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    /// Panics on negative or non-finite input.
    pub fn from_secs(secs: f64) -> SimTime {
        assert!(
            secs.is_finite() && secs >= 0.0,
            "invalid simulation time {secs}"
        );
        SimTime(secs)
    }

    pub fn secs(self) -> f64 {
        self.0
    }
}

impl Eq for SimTime {}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add<f64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: f64) -> SimTime {
        SimTime::from_secs(self.0 + rhs)
    }
}

impl Sub for SimTime {
    type Output = f64;
    fn sub(self, rhs: SimTime) -> f64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9}", self.0)
    }
}

/// Identifies a scheduled event for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .cmp(&self.at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Priority queue of timestamped events, ordered by `(fire_at, seq)`.
///
/// Events scheduled for the same instant fire in insertion order. A cancelled
/// event stays in the heap but is skipped when it reaches the front.
pub struct EventQueue<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    live: HashSet<u64>,
    fired: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            live: HashSet::new(),
            fired: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events executed so far.
    pub fn fired(&self) -> u64 {
        self.fired
    }

    /// Number of events still scheduled and not cancelled.
    pub fn live(&self) -> usize {
        self.live.len()
    }

    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<EventHandle, SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast {
                at: at.secs(),
                now: self.now.secs(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq, event });
        self.live.insert(seq);
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` seconds from now. Negative delays are a caller bug.
    pub fn schedule_in(&mut self, delay: f64, event: E) -> EventHandle {
        assert!(delay >= 0.0 && delay.is_finite(), "bad delay {delay}");
        let at = self.now + delay;
        self.schedule(at, event)
            .expect("non-negative delay cannot land in the past")
    }

    /// Returns true iff the event was live; it will then never fire.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.live.remove(&handle.0)
    }

    pub fn is_live(&self, handle: EventHandle) -> bool {
        self.live.contains(&handle.0)
    }

    /// Time of the earliest queued event, possibly a cancelled one.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.at)
    }

    /// Pops the next live event with `fire_at <= end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<(SimTime, E)> {
        loop {
            let top = self.heap.peek()?;
            if top.at > end {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            if !self.live.remove(&entry.seq) {
                continue;
            }
            assert!(entry.at >= self.now, "event queue ran backwards");
            self.now = entry.at;
            self.fired += 1;
            return Some((entry.at, entry.event));
        }
    }

    /// Sets the clock forward to `to` (no-op if already past it).
    pub fn advance_to(&mut self, to: SimTime) {
        if to > self.now {
            self.now = to;
        }
    }

    /// Executes every event with `fire_at <= end` in order, then leaves the
    /// clock at `end`. The handler may schedule and cancel further events.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        while let Some((at, event)) = self.pop_until(end) {
            handler(self, at, event);
        }
        self.advance_to(end);
        self.now
    }
}

/// Generator behind every random stream.
pub type SimRng = ChaCha8Rng;

/// Factory for per-purpose random substreams derived from one global seed.
///
/// Each label hashes with the seed into an independent ChaCha state, so
/// drawing from one stream never perturbs another.
#[derive(Clone, Copy, Debug)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Panics if `label` is empty.
    pub fn stream(&self, label: &str) -> SimRng {
        assert!(!label.is_empty(), "rng stream label must be non-empty");
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }
}
