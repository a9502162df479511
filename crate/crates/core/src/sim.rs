//! Discrete-event engine: an integer clock, a priority-ordered event queue
//! and the dequeue-execute loop.
//!
//! Events are ordered by `(fire_at, insertion sequence)`, so events scheduled
//! for the same instant execute in the order they were scheduled.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in integer picoseconds since the start of the run.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000_000)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000_000_000)
    }

    /// Rounds to the nearest picosecond.
    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime((secs * 1e12).round() as u64)
    }

    pub const fn as_ps(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-12
    }

    pub fn checked_add(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_add(rhs.0).map(SimTime)
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ps = self.0;
        if ps >= 1_000_000_000 {
            write!(f, "{:.3}ms", ps as f64 / 1e9)
        } else if ps >= 1_000_000 {
            write!(f, "{:.3}us", ps as f64 / 1e6)
        } else if ps >= 1_000 {
            write!(f, "{:.3}ns", ps as f64 / 1e3)
        } else {
            write!(f, "{ps}ps")
        }
    }
}

/// Identifies a scheduled event so it can be cancelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("cannot schedule an event at {at} when the clock is already at {now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
    #[error("the engine is already running")]
    AlreadyRunning,
}

struct Entry<E> {
    at: u64,
    seq: u64,
    event: E,
}

const BUCKETS: usize = 65;

/// Pending events keyed by `(fire_at, insertion sequence)`.
///
/// This is a radix heap. An entry at time `t` sits in bucket
/// `bit_length(t ^ last)`, where `last` is the time of the most recently
/// removed entry. Entries with equal times always share a bucket and keep
/// their insertion order, so ties pop first in, first out. A push must not
/// precede `last` unless the queue is empty.
///
/// Cancellation marks the handle as a tombstone; the entry stays in the
/// structure and is skipped when it reaches the front.
pub struct EventQueue<E> {
    // Bucket 0: entries at exactly `last`, in pop order.
    front: VecDeque<Entry<E>>,
    buckets: Vec<Vec<Entry<E>>>,
    last: u64,
    // Time of the last live entry returned. Tombstones popped past it leave
    // `last` ahead of the clock, so an empty queue falls back to this.
    floor: u64,
    len: usize,
    cancelled: HashSet<u64>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            front: VecDeque::new(),
            buckets: (0..BUCKETS).map(|_| Vec::new()).collect(),
            last: 0,
            floor: 0,
            len: 0,
            cancelled: HashSet::new(),
            next_seq: 0,
        }
    }

    fn bucket(&self, at: u64) -> usize {
        (u64::BITS - (at ^ self.last).leading_zeros()) as usize
    }

    fn place(&mut self, e: Entry<E>) {
        match self.bucket(e.at) {
            0 => self.front.push_back(e),
            b => self.buckets[b].push(e),
        }
    }

    /// Inserts an event. `at` must not precede the last popped timestamp.
    pub fn push(&mut self, at: SimTime, event: E) -> EventHandle {
        if self.len == 0 {
            self.last = self.floor;
        }
        debug_assert!(at.0 >= self.last);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.place(Entry { at: at.0, seq, event });
        self.len += 1;
        EventHandle(seq)
    }

    // Moves the lowest non-empty bucket down if its earliest entry is not
    // after `limit`. Returns whether the front then holds entries due by
    // `limit`.
    fn refill(&mut self, limit: u64) -> bool {
        if !self.front.is_empty() {
            return self.last <= limit;
        }
        let Some(b) = (1..BUCKETS).find(|&b| !self.buckets[b].is_empty()) else {
            return false;
        };
        let mut moving = std::mem::take(&mut self.buckets[b]);
        let min = moving.iter().map(|e| e.at).min().expect("bucket is not empty");
        if min > limit {
            self.buckets[b] = moving;
            return false;
        }
        self.last = min;
        for e in moving.drain(..) {
            self.place(e);
        }
        self.buckets[b] = moving;
        true
    }

    /// Removes and returns the earliest live event if it fires at or before
    /// `limit`. Tombstones after `limit` stay where they are.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<(SimTime, E)> {
        while self.refill(limit.0) {
            let e = self.front.pop_front().expect("front is not empty");
            self.len -= 1;
            if !self.cancelled.is_empty() && self.cancelled.remove(&e.seq) {
                continue;
            }
            self.floor = e.at;
            return Some((SimTime(e.at), e.event));
        }
        None
    }

    /// Removes and returns the earliest live event.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        self.pop_until(SimTime::MAX)
    }

    /// Timestamp of the next live event.
    pub fn peek_time(&self) -> Option<SimTime> {
        let live = |e: &&Entry<E>| !self.cancelled.contains(&e.seq);
        if self.front.iter().any(|e| live(&e)) {
            return Some(SimTime(self.last));
        }
        (1..BUCKETS)
            .find_map(|b| self.buckets[b].iter().filter(live).map(|e| e.at).min())
            .map(SimTime)
    }

    /// Marks a pending event so it is skipped instead of executed. Only pass
    /// handles of events that have not fired yet; stale tombstones are kept
    /// until the queue drains.
    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_seq {
            self.cancelled.insert(handle.0);
        }
    }

    /// Number of stored entries, including cancelled ones not yet skipped.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Approximate heap footprint in bytes.
    pub fn heap_bytes(&self) -> usize {
        let entries = self.front.capacity() + self.buckets.iter().map(Vec::capacity).sum::<usize>();
        entries * std::mem::size_of::<Entry<E>>()
            + BUCKETS * std::mem::size_of::<Vec<Entry<E>>>()
            + self.cancelled.capacity() * 16
    }

    fn purge_tombstones_if_drained(&mut self) {
        if self.is_empty() {
            self.cancelled.clear();
        }
    }
}

/// Receives events from the engine.
pub trait Handler<E> {
    fn handle(&mut self, sched: &mut Scheduler<E>, event: E);
}

/// The simulation clock plus its event queue.
pub struct Scheduler<E> {
    queue: EventQueue<E>,
    now: SimTime,
    running: bool,
    stop_requested: bool,
    executed: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            queue: EventQueue::new(),
            now: SimTime::ZERO,
            running: false,
            stop_requested: false,
            executed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Total events executed over the scheduler's lifetime.
    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn queue(&self) -> &EventQueue<E> {
        &self.queue
    }

    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<EventHandle, SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast { at, now: self.now });
        }
        Ok(self.queue.push(at, event))
    }

    /// Schedules `event` at `now + delay`.
    pub fn schedule_in(&mut self, delay: SimTime, event: E) -> EventHandle {
        self.queue.push(self.now + delay, event)
    }

    pub fn cancel(&mut self, handle: EventHandle) {
        self.queue.cancel(handle);
    }

    /// Makes the running loop return after the current event.
    pub fn stop(&mut self) {
        self.stop_requested = true;
    }

    /// Executes every event with `fire_at <= t_end`, then leaves the clock
    /// at `t_end`. Returns the number of events executed by this call.
    pub fn run_until<H: Handler<E>>(
        &mut self,
        handler: &mut H,
        t_end: SimTime,
    ) -> Result<u64, SimError> {
        let count = self.drive(handler, Some(t_end))?;
        if !self.stop_requested && t_end > self.now {
            self.now = t_end;
        }
        self.stop_requested = false;
        Ok(count)
    }

    /// Executes events until the queue is empty or [`Scheduler::stop`] is
    /// called. The clock stays at the last executed event.
    pub fn run<H: Handler<E>>(&mut self, handler: &mut H) -> Result<u64, SimError> {
        let count = self.drive(handler, None)?;
        self.stop_requested = false;
        Ok(count)
    }

    fn drive<H: Handler<E>>(
        &mut self,
        handler: &mut H,
        t_end: Option<SimTime>,
    ) -> Result<u64, SimError> {
        if self.running {
            return Err(SimError::AlreadyRunning);
        }
        self.running = true;
        self.stop_requested = false;
        let mut count = 0u64;
        let limit = t_end.unwrap_or(SimTime::MAX);
        while !self.stop_requested {
            let Some((at, event)) = self.queue.pop_until(limit) else {
                break;
            };
            debug_assert!(at >= self.now);
            self.now = at;
            count += 1;
            self.executed += 1;
            handler.handle(self, event);
        }
        self.queue.purge_tombstones_if_drained();
        self.running = false;
        Ok(count)
    }
}
