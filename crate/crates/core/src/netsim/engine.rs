//! Deterministic event queue.
//!
//! Events are ordered by `(time, insertion sequence)`, so two events scheduled
//! for the same instant fire in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::error::SimError;
use crate::time::SimTime;

/// Handle returned by [`EventQueue::schedule`]; can be used to cancel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

struct Entry<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert to pop the earliest entry first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .cmp(&self.at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

pub struct EventQueue<E> {
    clock: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    cancelled: HashSet<u64>,
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
            clock: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            fired: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    /// Number of events delivered so far.
    pub fn fired(&self) -> u64 {
        self.fired
    }

    pub fn schedule(&mut self, event: E, at: SimTime) -> Result<EventHandle, SimError> {
        if at < self.clock {
            return Err(SimError::SchedulingInPast {
                at,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq, event });
        Ok(EventHandle(seq))
    }

    /// Schedules `event` at `now + delay`.
    pub fn schedule_in(&mut self, event: E, delay: SimTime) -> EventHandle {
        let at = self.clock.saturating_add(delay);
        self.schedule(event, at)
            .expect("a non-negative delay never lands in the past")
    }

    pub fn cancel(&mut self, handle: EventHandle) {
        self.cancelled.insert(handle.0);
    }

    pub fn is_empty(&mut self) -> bool {
        self.peek_time().is_none()
    }

    /// Time of the next live event.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        self.drop_cancelled_head();
        self.heap.peek().map(|e| e.at)
    }

    fn drop_cancelled_head(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.cancelled.remove(&top.seq) {
                self.heap.pop();
            } else {
                break;
            }
        }
    }

    /// Pops the next event with time `<= limit`, advancing the clock to it.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<(SimTime, E)> {
        self.drop_cancelled_head();
        match self.heap.peek() {
            Some(top) if top.at <= limit => {
                let entry = self.heap.pop().expect("peeked");
                self.clock = entry.at;
                self.fired += 1;
                Some((entry.at, entry.event))
            }
            _ => None,
        }
    }

    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        self.pop_until(SimTime::MAX)
    }

    /// Moves the clock forward without firing anything. Used by `run_until`
    /// once every event up to `t` has been delivered.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.clock {
            self.clock = t;
        }
    }

    /// Delivers every event with time `<= t` to `handler` and leaves the clock at `t`.
    pub fn run_until<F>(&mut self, t: SimTime, mut handler: F) -> Result<SimTime, SimError>
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        if t < self.clock {
            return Err(SimError::SchedulingInPast {
                at: t,
                clock: self.clock,
            });
        }
        while let Some((at, ev)) = self.pop_until(t) {
            handler(self, at, ev);
        }
        self.advance_to(t);
        Ok(self.clock)
    }
}
