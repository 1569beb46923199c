//! Virtual-time discrete-event engine.
//!
//! The engine is passive: callers push events with [`Engine::schedule`] and
//! pull them back in `(fire_at, seq)` order with [`Engine::advance`]. All
//! simulator logic lives in the single driver loop that consumes the events.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use thiserror::Error;

/// A point in simulated time, in integer nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub fn nanos(self) -> u64 {
        self.0
    }
}

impl Add<u64> for VirtualTime {
    type Output = VirtualTime;
    fn add(self, rhs: u64) -> VirtualTime {
        VirtualTime(self.0 + rhs)
    }
}

impl Sub for VirtualTime {
    type Output = u64;
    fn sub(self, rhs: VirtualTime) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled in the past: fire_at {fire_at} < now {now}")]
    InPast { fire_at: VirtualTime, now: VirtualTime },
}

struct Entry<P> {
    fire_at: VirtualTime,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// BinaryHeap is a max-heap; invert so the smallest (fire_at, seq) pops first.
impl<P> Ord for Entry<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Deterministic event queue ordered by `(fire_at, seq)`.
pub struct Engine<P> {
    now: VirtualTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<P>>,
    // Ids still pending; cancelled entries stay in the heap and are dropped lazily.
    live: HashSet<u64>,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Engine { now: VirtualTime::ZERO, next_seq: 0, heap: BinaryHeap::new(), live: HashSet::new() }
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.live.len()
    }

    pub fn schedule(&mut self, payload: P, fire_at: VirtualTime) -> Result<EventId, EngineError> {
        if fire_at < self.now {
            return Err(EngineError::InPast { fire_at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { fire_at, seq, payload });
        self.live.insert(seq);
        Ok(EventId(seq))
    }

    /// Pops the minimum pending event and moves the clock to its time.
    /// `None` means the simulation is complete.
    pub fn advance(&mut self) -> Option<(VirtualTime, P)> {
        while let Some(entry) = self.heap.pop() {
            if self.live.remove(&entry.seq) {
                self.now = entry.fire_at;
                return Some((entry.fire_at, entry.payload));
            }
        }
        None
    }

    /// Time of the next pending event, if any.
    pub fn peek_time(&mut self) -> Option<VirtualTime> {
        while let Some(top) = self.heap.peek() {
            if self.live.contains(&top.seq) {
                return Some(top.fire_at);
            }
            self.heap.pop();
        }
        None
    }

    pub fn cancel(&mut self, id: EventId) -> bool {
        self.live.remove(&id.0)
    }
}
