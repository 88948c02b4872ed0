//! Six-pointer transfer progress and the failover decision logic.
//!
//! Sender: `acked <= transmitted <= posted <= total`.
//! Receiver: `done <= received <= posted <= total`.
//! Chunks may complete out of order when striped over several QPs, so the
//! `acked`/`done` pointers are the longest completed prefix.

use serde::Serialize;

use crate::error::SimError;
use crate::time::SimTime;
use crate::verbs::{WcStatus, WrId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Sender,
    Receiver,
}

/// What the caller should do after feeding an input to the state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    NoAction,
    TriggerSwitch,
    SendCtsProbe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SenderProgress {
    pub total: u64,
    pub posted: u64,
    pub transmitted: u64,
    pub acked: u64,
    #[serde(skip)]
    completed: Vec<bool>,
}

impl SenderProgress {
    pub fn new(total: u64) -> Self {
        SenderProgress {
            total,
            posted: 0,
            transmitted: 0,
            acked: 0,
            completed: vec![false; total as usize],
        }
    }

    pub fn prepare(&mut self) {
        assert!(self.posted < self.total);
        self.posted += 1;
    }

    /// Hands chunk `transmitted` to the NIC.
    pub fn transmit(&mut self) -> u64 {
        assert!(self.transmitted < self.posted);
        self.transmitted += 1;
        self.transmitted - 1
    }

    /// Handles the completion of chunk `chunk`'s send.
    pub fn on_completion(
        &mut self,
        chunk: u64,
        wr: WrId,
        status: WcStatus,
    ) -> Result<Action, SimError> {
        match status {
            WcStatus::Flushed => Ok(Action::NoAction),
            WcStatus::RetryExceeded => Ok(Action::TriggerSwitch),
            WcStatus::Success => {
                if chunk >= self.transmitted || self.completed[chunk as usize] {
                    return Err(SimError::UnknownWr(wr));
                }
                self.completed[chunk as usize] = true;
                while self.acked < self.total && self.completed[self.acked as usize] {
                    self.acked += 1;
                }
                Ok(Action::NoAction)
            }
        }
    }

    /// Adopts the receiver's `done` as the breakpoint: `acked := done`, then
    /// `posted, transmitted := acked`.
    pub fn retreat_to(&mut self, done: u64) {
        debug_assert!(done >= self.acked, "acks never precede completion");
        self.acked = done.min(self.total);
        for c in &mut self.completed[self.acked as usize..] {
            *c = false;
        }
        for c in &mut self.completed[..self.acked as usize] {
            *c = true;
        }
        self.transmitted = self.acked;
        self.posted = self.acked;
    }

    pub fn is_complete(&self) -> bool {
        self.acked == self.total
    }

    pub fn check(&self) -> bool {
        self.acked <= self.transmitted
            && self.transmitted <= self.posted
            && self.posted <= self.total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReceiverProgress {
    pub total: u64,
    pub posted: u64,
    pub received: u64,
    pub done: u64,
    #[serde(skip)]
    completed: Vec<bool>,
}

impl ReceiverProgress {
    pub fn new(total: u64) -> Self {
        ReceiverProgress {
            total,
            posted: 0,
            received: 0,
            done: 0,
            completed: vec![false; total as usize],
        }
    }

    pub fn post_buffer(&mut self) {
        assert!(self.posted < self.total);
        self.posted += 1;
    }

    /// Issues the receive request for chunk `received`.
    pub fn issue_recv(&mut self) -> u64 {
        assert!(self.received < self.posted);
        self.received += 1;
        self.received - 1
    }

    /// Marks chunk `chunk` as landed. Returns the chunks newly covered by
    /// `done`, in order. Duplicates and chunks outside `[done, received)` are
    /// rejected.
    pub fn complete(&mut self, chunk: u64) -> Result<std::ops::Range<u64>, u64> {
        if chunk < self.done || chunk >= self.received || self.completed[chunk as usize] {
            return Err(chunk);
        }
        self.completed[chunk as usize] = true;
        let from = self.done;
        while self.done < self.total && self.completed[self.done as usize] {
            self.done += 1;
        }
        Ok(from..self.done)
    }

    /// `received := done`, discarding chunks that landed beyond the prefix.
    pub fn retreat(&mut self) -> u64 {
        for c in &mut self.completed[self.done as usize..] {
            *c = false;
        }
        self.received = self.done;
        self.done
    }

    pub fn is_complete(&self) -> bool {
        self.done == self.total
    }

    pub fn outstanding(&self) -> bool {
        self.received > self.done
    }

    pub fn check(&self) -> bool {
        self.done <= self.received && self.received <= self.posted && self.posted <= self.total
    }
}

/// Breakpoint migration between the two sides of one connection. Returns
/// the chunk index retransmission resumes from.
pub fn switch_qp(receiver: &mut ReceiverProgress, sender: &mut SenderProgress) -> u64 {
    let done = receiver.retreat();
    sender.retreat_to(done);
    done
}

/// Receiver-side stall detector: probes the link with a CTS when no
/// completion arrives within `delta` of the last issued request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiverTimer {
    pub delta: SimTime,
    pub last_wr_issue_time: SimTime,
    pub probe_outstanding: bool,
}

impl ReceiverTimer {
    pub fn new(delta: SimTime) -> Self {
        ReceiverTimer {
            delta,
            last_wr_issue_time: SimTime::ZERO,
            probe_outstanding: false,
        }
    }

    pub fn touch(&mut self, now: SimTime) {
        self.last_wr_issue_time = now;
    }

    /// Earliest time a check can fire.
    pub fn deadline(&self) -> SimTime {
        self.last_wr_issue_time + self.delta + SimTime(1)
    }

    pub fn check(&mut self, now: SimTime, outstanding: bool) -> Action {
        if !outstanding || self.probe_outstanding || now - self.last_wr_issue_time <= self.delta {
            return Action::NoAction;
        }
        self.probe_outstanding = true;
        Action::SendCtsProbe
    }

    /// The probe's completion decides between an innocent stall and a dead link.
    pub fn on_probe(&mut self, now: SimTime, status: WcStatus) -> Action {
        self.probe_outstanding = false;
        match status {
            WcStatus::Success | WcStatus::Flushed => {
                self.last_wr_issue_time = now;
                Action::NoAction
            }
            WcStatus::RetryExceeded => Action::TriggerSwitch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sender_at(total: u64, posted: u64, transmitted: u64, acked: u64) -> SenderProgress {
        let mut s = SenderProgress::new(total);
        for _ in 0..posted {
            s.prepare();
        }
        for _ in 0..transmitted {
            s.transmit();
        }
        for k in 0..acked {
            s.on_completion(k, WrId(k), WcStatus::Success).unwrap();
        }
        s
    }

    fn receiver_at(total: u64, posted: u64, received: u64, done: u64) -> ReceiverProgress {
        let mut r = ReceiverProgress::new(total);
        for _ in 0..posted {
            r.post_buffer();
        }
        for _ in 0..received {
            r.issue_recv();
        }
        for k in 0..done {
            r.complete(k).unwrap();
        }
        r
    }

    #[test]
    fn ack_advances_pointer() {
        let mut s = sender_at(16, 8, 8, 3);
        assert_eq!(
            s.on_completion(3, WrId(3), WcStatus::Success),
            Ok(Action::NoAction)
        );
        assert_eq!(s.acked, 4);
    }

    #[test]
    fn retry_exceeded_triggers_switch() {
        let mut s = sender_at(16, 8, 8, 3);
        assert_eq!(
            s.on_completion(3, WrId(3), WcStatus::RetryExceeded),
            Ok(Action::TriggerSwitch)
        );
        assert_eq!(s.acked, 3);
    }

    #[test]
    fn duplicate_ack_is_unknown() {
        let mut s = sender_at(16, 8, 8, 3);
        assert_eq!(
            s.on_completion(1, WrId(77), WcStatus::Success),
            Err(SimError::UnknownWr(WrId(77)))
        );
    }

    #[test]
    fn switch_retreats_both_sides() {
        let mut r = receiver_at(16, 10, 8, 6);
        let mut s = sender_at(16, 10, 9, 5);
        let resume = switch_qp(&mut r, &mut s);
        assert_eq!(resume, 6);
        assert_eq!((r.posted, r.received, r.done), (10, 6, 6));
        assert_eq!((s.posted, s.transmitted, s.acked), (6, 6, 6));
    }

    #[test]
    fn switch_after_completion_needs_no_retransmission() {
        let mut r = receiver_at(4, 4, 4, 4);
        let mut s = sender_at(4, 4, 4, 4);
        assert_eq!(switch_qp(&mut r, &mut s), 4);
        assert!(s.is_complete() && r.is_complete());
    }

    #[test]
    fn out_of_order_completion_waits_for_prefix() {
        let mut r = receiver_at(4, 4, 4, 0);
        assert_eq!(r.complete(1), Ok(0..0));
        assert_eq!(r.complete(1), Err(1));
        assert_eq!(r.complete(0), Ok(0..2));
        r.retreat();
        assert_eq!(r.received, 2);
    }

    #[test]
    fn timer_thresholds() {
        let mut t = ReceiverTimer::new(SimTime(100));
        t.touch(SimTime(1000));
        assert_eq!(t.check(SimTime(1099), true), Action::NoAction);
        assert_eq!(t.check(SimTime(1101), false), Action::NoAction);
        assert_eq!(t.check(SimTime(1101), true), Action::SendCtsProbe);
        // One probe at a time.
        assert_eq!(t.check(SimTime(1200), true), Action::NoAction);
        assert_eq!(
            t.on_probe(SimTime(1300), WcStatus::Success),
            Action::NoAction
        );
        assert_eq!(t.deadline(), SimTime(1401));
        assert_eq!(t.check(SimTime(1401), true), Action::SendCtsProbe);
        assert_eq!(
            t.on_probe(SimTime(2000), WcStatus::RetryExceeded),
            Action::TriggerSwitch
        );
    }

    proptest! {
        /// Random interleavings of sender and receiver progress keep every
        /// pointer ordering, and switching keeps `done >= acked`.
        #[test]
        fn pointer_invariants(ops in prop::collection::vec(0u8..6, 1..200), total in 1u64..24) {
            let mut s = SenderProgress::new(total);
            let mut r = ReceiverProgress::new(total);
            let mut landed: Vec<u64> = vec![];
            for op in ops {
                match op {
                    0 if s.posted < total => s.prepare(),
                    1 if r.posted < total => r.post_buffer(),
                    2 if r.received < r.posted => { r.issue_recv(); }
                    3 if s.transmitted < s.posted && s.transmitted < r.received => {
                        let k = s.transmit();
                        landed.push(k);
                    }
                    4 if !landed.is_empty() => {
                        let k = landed.remove(0);
                        if r.complete(k).is_ok() && k >= s.acked {
                            let _ = s.on_completion(k, WrId(k), WcStatus::Success);
                        }
                    }
                    5 => {
                        switch_qp(&mut r, &mut s);
                        landed.clear();
                    }
                    _ => {}
                }
                prop_assert!(s.check() && r.check());
                prop_assert!(r.done >= s.acked);
            }
        }
    }
}
