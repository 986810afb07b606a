//! Discrete-event engine: integer-nanosecond clock, cancellable event queue
//! and the dispatch loop.
//!
//! Events are ordered by `(time, sequence)`. The sequence number is assigned
//! at scheduling time, so events that share a timestamp are dispatched in
//! insertion order. Two backoffs expiring in the same slot therefore both
//! fire before either transmission is evaluated by the channel model.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Simulation time in nanoseconds since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    /// Rounds a non-negative number of seconds to the nearest nanosecond.
    pub fn from_secs_f64(s: f64) -> Self {
        assert!(s.is_finite() && s >= 0.0, "negative or non-finite time {s}");
        SimTime((s * 1e9).round() as u64)
    }

    /// Rounds a non-negative number of microseconds to the nearest nanosecond.
    pub fn from_micros_f64(us: f64) -> Self {
        assert!(us.is_finite() && us >= 0.0, "negative or non-finite duration {us}");
        SimTime((us * 1e3).round() as u64)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0 as f64 * 1e-3
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    /// `self * n`, used for slot arithmetic.
    pub const fn times(self, n: u64) -> SimTime {
        SimTime(self.0 * n)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(
            self.0
                .checked_sub(rhs.0)
                .expect("SimTime subtraction underflow"),
        )
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Handle returned by [`EventQueue::schedule`]; used to cancel the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event<K> {
    pub time: SimTime,
    pub sequence: u64,
    pub kind: K,
}

struct Entry<K> {
    time: SimTime,
    sequence: u64,
    kind: K,
}

impl<K> PartialEq for Entry<K> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.sequence) == (other.time, other.sequence)
    }
}

impl<K> Eq for Entry<K> {}

impl<K> PartialOrd for Entry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Entry<K> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.sequence).cmp(&(other.time, other.sequence))
    }
}

/// Priority queue of pending events plus the simulation clock.
pub struct EventQueue<K> {
    heap: BinaryHeap<Reverse<Entry<K>>>,
    cancelled: HashSet<u64>,
    next_sequence: u64,
    now: SimTime,
}

impl<K> Default for EventQueue<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> EventQueue<K> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            next_sequence: 0,
            now: SimTime::ZERO,
        }
    }

    /// Time of the most recently dispatched event.
    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Enqueues `kind` at absolute time `time`.
    ///
    /// Panics if `time` lies before the current clock: that is always a
    /// model bug and the run cannot be trusted afterwards.
    pub fn schedule(&mut self, time: SimTime, kind: K) -> EventHandle {
        assert!(
            time >= self.now,
            "event scheduled in the past: {time} < now {}",
            self.now
        );
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Reverse(Entry {
            time,
            sequence,
            kind,
        }));
        EventHandle(sequence)
    }

    /// Marks a pending event as cancelled. Cancelling an event that was
    /// already dispatched is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_sequence {
            self.cancelled.insert(handle.0);
        }
    }

    /// Number of live (non-cancelled) events still queued.
    pub fn len(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn discard_cancelled_head(&mut self) {
        while let Some(Reverse(head)) = self.heap.peek() {
            if self.cancelled.remove(&head.sequence) {
                self.heap.pop();
            } else {
                break;
            }
        }
    }

    /// Timestamp of the next live event.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        self.discard_cancelled_head();
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    /// Pops the next live event if its time is `<= until`, advancing the clock.
    pub fn pop_until(&mut self, until: SimTime) -> Option<Event<K>> {
        self.discard_cancelled_head();
        match self.heap.peek() {
            Some(Reverse(head)) if head.time <= until => {}
            _ => return None,
        }
        let Reverse(entry) = self.heap.pop()?;
        debug_assert!(entry.time >= self.now);
        self.now = entry.time;
        Some(Event {
            time: entry.time,
            sequence: entry.sequence,
            kind: entry.kind,
        })
    }
}

/// Dispatches events in `(time, sequence)` order until the queue is empty or
/// the next event lies beyond `until`. Events past the horizon stay queued.
///
/// Returns the time of the last dispatched event ([`SimTime::ZERO`] if none).
pub fn run<K, F>(queue: &mut EventQueue<K>, until: SimTime, mut dispatch: F) -> SimTime
where
    F: FnMut(&mut EventQueue<K>, Event<K>),
{
    while let Some(event) = queue.pop_until(until) {
        dispatch(queue, event);
    }
    queue.now()
}
