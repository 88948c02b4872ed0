//! Sender and receiver state machines. Each side only reads its own half of
//! a connection; everything crossing the wire goes through the fabric.

use super::engine::*;
use super::mode::Stage;
use super::msg::{epoch_bits, Msg, WrTag};
use super::state::{Action, Role};
use crate::error::SimError;
use crate::time::SimTime;
use crate::verbs::{QpRole, QpState, SendRequest, WcStatus, WorkCompletion};

fn other(role: QpRole) -> QpRole {
    match role {
        QpRole::Primary => QpRole::Backup,
        QpRole::Backup => QpRole::Primary,
    }
}

fn switch_event(to: QpRole) -> LogEvent {
    match to {
        QpRole::Primary => LogEvent::SwitchToPrimary,
        QpRole::Backup => LogEvent::SwitchToBackup,
    }
}

/// Forward distance between two 20-bit epochs.
fn epoch_ahead(new: u32, cur: u32) -> u32 {
    new.wrapping_sub(epoch_bits(cur)) & ((1 << 20) - 1)
}

impl TransportEngine {
    fn set_fatal(&mut self, e: SimError) {
        self.fatal.get_or_insert(e);
    }

    // ---- sender ----

    pub(crate) fn pump_sender(&mut self, conn: ConnId) {
        let c = &self.conns[conn.0];
        if c.failed || c.sender_paused {
            return;
        }
        let Some(&tid) = c.send_queue.front() else {
            return;
        };
        let epoch = c.sender_epoch;
        let eb = epoch_bits(epoch);
        let qp = c.pair(role_of(epoch)).expect("active pair").sender;
        let now = self.queue.now();
        let prep = self.cfg.stage_costs.cost(Stage::DataPreparation);
        let copy = self.cfg.stage_costs.cost(Stage::BufferCopy);
        let staged = self.cfg.stage_costs.has_copy_stage();
        let slots = self.cfg.staging_slots;
        let mut notes = Vec::new();
        let t = &mut self.transfers[tid.0];
        if !t.sender_ready || t.status != TransferStatus::InProgress {
            return;
        }
        while !t.prep_busy && t.sender.posted < t.sender.total {
            let k = t.sender.posted;
            if k < t.prepared || prep.is_free() {
                t.sender.prepare();
                t.prepared = t.prepared.max(k + 1);
                notes.push((LogEvent::Post, k));
            } else {
                t.prep_busy = true;
                let at = now + prep.duration(t.chunk_len(k));
                self.queue
                    .schedule(Event::Prepared { transfer: tid }, at)
                    .expect("future");
                break;
            }
        }
        if staged {
            while !t.copy_busy && t.copied < t.sender.posted && t.slots_used < slots {
                t.slots_used += 1;
                if copy.is_free() {
                    t.copied += 1;
                } else {
                    t.copy_busy = true;
                    let at = now + copy.duration(t.chunk_len(t.copied));
                    let generation = t.copy_gen;
                    self.queue
                        .schedule(
                            Event::Copied {
                                transfer: tid,
                                generation,
                            },
                            at,
                        )
                        .expect("future");
                    break;
                }
            }
        }
        loop {
            let k = t.sender.transmitted;
            if k >= t.sender.posted || (staged && k >= t.copied) || !t.cts.contains(&(eb, k)) {
                break;
            }
            let imm = Msg::Data {
                epoch: eb,
                seq: t.seq as u16,
                chunk: k,
            }
            .encode();
            let req = SendRequest::data(t.src_region, k * t.chunk_size, t.chunk_len(k), imm);
            match self.fabric.post_send(&mut self.queue, qp, req) {
                Ok(wr) => {
                    t.cts.remove(&(eb, k));
                    t.sender.transmit();
                    t.transmissions.push((epoch, k));
                    self.tags.insert(
                        wr,
                        (
                            conn,
                            WrTag::Data {
                                transfer: tid,
                                chunk: k,
                                epoch,
                            },
                        ),
                    );
                    notes.push((LogEvent::Transmit, k));
                }
                // QP already in Error: the switch it causes will restart us.
                Err(_) => break,
            }
        }
        for (ev, k) in notes {
            self.note(conn, Role::Sender, ev, Some(k));
        }
    }

    pub(crate) fn on_prepared(&mut self, tid: TransferId) {
        let t = &mut self.transfers[tid.0];
        t.prep_busy = false;
        t.prepared += 1;
        let conn = t.conn;
        self.pump_sender(conn);
    }

    pub(crate) fn on_copied(&mut self, tid: TransferId, generation: u64) {
        let t = &mut self.transfers[tid.0];
        if generation != t.copy_gen {
            return;
        }
        t.copy_busy = false;
        t.copied += 1;
        let conn = t.conn;
        self.pump_sender(conn);
    }

    fn on_data_wc(
        &mut self,
        conn: ConnId,
        tid: TransferId,
        chunk: u64,
        epoch: u32,
        wc: &WorkCompletion,
    ) {
        let c = &self.conns[conn.0];
        if c.failed || epoch != c.sender_epoch {
            return;
        }
        match wc.status {
            WcStatus::Flushed => {}
            WcStatus::RetryExceeded => {
                if !c.sender_paused {
                    self.sender_trigger(conn);
                }
            }
            WcStatus::Success => {
                let now = self.queue.now();
                let staged = self.cfg.stage_costs.has_copy_stage();
                let t = &mut self.transfers[tid.0];
                if t.status != TransferStatus::InProgress {
                    return;
                }
                if let Err(e) = t.sender.on_completion(chunk, wc.wr_id, WcStatus::Success) {
                    self.set_fatal(e);
                    return;
                }
                if staged {
                    t.slots_used = t.slots_used.saturating_sub(1);
                }
                let done = t.sender.is_complete();
                if self.cfg.record_messages {
                    self.conns[conn.0].messages.push(MessageRecord {
                        wr_id: wc.wr_id,
                        size: wc.bytes,
                        t1: wc.post_time,
                        t2: now,
                    });
                }
                self.note(conn, Role::Sender, LogEvent::Ack, Some(chunk));
                if done {
                    self.complete_sender(conn, tid);
                }
                self.pump_sender(conn);
            }
        }
    }

    fn complete_sender(&mut self, conn: ConnId, tid: TransferId) {
        let now = self.queue.now();
        let t = &mut self.transfers[tid.0];
        if t.status != TransferStatus::InProgress {
            return;
        }
        t.status = TransferStatus::Completed;
        t.completed_at = Some(now);
        let q = &mut self.conns[conn.0].send_queue;
        if let Some(i) = q.iter().position(|&x| x == tid) {
            q.remove(i);
        }
        self.pending.push_back(TransportEvent::Completed {
            transfer: tid,
            at: now,
        });
    }

    /// Sender-side trigger: its own completion reported the link dead.
    fn sender_trigger(&mut self, conn: ConnId) {
        let c = &self.conns[conn.0];
        if !self.cfg.failover || c.backup.is_none() {
            self.fail_connection(conn);
            return;
        }
        let role = role_of(c.sender_epoch);
        let old = c.pair(role).expect("active pair").sender;
        self.conns[conn.0].sender_paused = true;
        let now = self.queue.now();
        self.fabric.move_to_error(&mut self.queue, old);
        self.fabric.reset_qp(now, old);
        self.send_request(conn, other(role));
    }

    /// Asks the receiver, over `via`, to move off the sender's epoch.
    fn send_request(&mut self, conn: ConnId, via: QpRole) {
        let c = &self.conns[conn.0];
        let target = c.pair(via).expect("pair exists").sender;
        let eb = epoch_bits(c.sender_epoch);
        let now = self.queue.now();
        if self.fabric.qp(target).state == QpState::Error {
            self.fabric.reset_qp(now, target);
        }
        match self.fabric.post_send(
            &mut self.queue,
            target,
            SendRequest::cts(Msg::Request { epoch: eb }.encode()),
        ) {
            Ok(wr) => {
                self.tags.insert(wr, (conn, WrTag::Request { via }));
            }
            Err(_) => self.fail_connection(conn),
        }
    }

    /// A switch message ran out of retries. Inside the reconnect window
    /// try again over the other QP, otherwise give up.
    fn control_lost(&mut self, conn: ConnId) -> bool {
        let now = self.queue.now();
        let window = SimTime(self.cfg.reconnect_window_ns);
        let c = &mut self.conns[conn.0];
        if c.failed {
            return false;
        }
        let since = *c.dead_since.get_or_insert(now);
        if window == SimTime::ZERO || now - since >= window {
            self.fail_connection(conn);
            return false;
        }
        true
    }

    /// Applies a receiver-pushed switch: retreat to the receiver's `done`
    /// and resume on the new epoch's QP.
    fn sender_adopt(&mut self, conn: ConnId, epoch: u32, seq: u16, done: u64) {
        let c = &self.conns[conn.0];
        let ahead = epoch_ahead(epoch, c.sender_epoch);
        if ahead == 0 || ahead >= 1 << 19 {
            return;
        }
        let now = self.queue.now();
        let old = c.pair(role_of(c.sender_epoch)).expect("active pair").sender;
        let new_epoch = c.sender_epoch + ahead;
        let target = role_of(new_epoch);
        self.fabric.move_to_error(&mut self.queue, old);
        self.fabric.reset_qp(now, old);
        let c = &mut self.conns[conn.0];
        c.sender_epoch = new_epoch;
        c.sender_paused = false;
        let queue: Vec<TransferId> = c.send_queue.iter().copied().collect();
        let mut finished = Vec::new();
        for tid in queue {
            let t = &mut self.transfers[tid.0];
            let d = seq.wrapping_sub(t.seq as u16) as i16;
            if d < 0 {
                break;
            }
            let to = if d > 0 { t.sender.total } else { done };
            if to < t.sender.acked {
                self.fatal.get_or_insert(SimError::Invariant(format!(
                    "{tid}: pushed done {to} below acked {}",
                    t.sender.acked
                )));
                return;
            }
            t.retransmitted += t.sender.transmitted.saturating_sub(to);
            t.sender.retreat_to(to);
            t.copied = t.sender.acked;
            t.slots_used = 0;
            t.copy_busy = false;
            t.copy_gen += 1;
            if t.sender.is_complete() {
                finished.push(tid);
            }
        }
        self.note(conn, Role::Sender, switch_event(target), Some(done));
        for tid in finished {
            self.complete_sender(conn, tid);
        }
        self.pump_sender(conn);
    }

    // ---- receiver ----

    pub(crate) fn pump_receiver(&mut self, conn: ConnId) {
        let c = &self.conns[conn.0];
        if c.failed {
            return;
        }
        let Some(&tid) = c.recv_queue.front() else {
            return;
        };
        let epoch = c.receiver_epoch;
        let eb = epoch_bits(epoch);
        let qp = c.pair(role_of(epoch)).expect("active pair").receiver;
        if self.fabric.qp(qp).state != QpState::Connected {
            return;
        }
        let now = self.queue.now();
        let window = self.cfg.window as u64;
        let t = &mut self.transfers[tid.0];
        while t.receiver.posted < t.receiver.total.min(t.receiver.done + window) {
            t.receiver.post_buffer();
        }
        let mut issued = Vec::new();
        while t.receiver.received < t.receiver.posted {
            let k = t.receiver.received;
            let Ok(rwr) =
                self.fabric
                    .post_recv(now, qp, t.dst_region, k * t.chunk_size, t.chunk_len(k))
            else {
                break;
            };
            t.receiver.issue_recv();
            self.tags.insert(
                rwr,
                (
                    conn,
                    WrTag::Recv {
                        transfer: tid,
                        chunk: k,
                        epoch,
                    },
                ),
            );
            let cts = Msg::Cts {
                epoch: eb,
                seq: t.seq as u16,
                chunk: k,
            }
            .encode();
            if let Ok(w) = self
                .fabric
                .post_send(&mut self.queue, qp, SendRequest::cts(cts))
            {
                self.tags.insert(w, (conn, WrTag::Cts { epoch }));
            }
            issued.push(k);
        }
        if !issued.is_empty() {
            self.conns[conn.0].timer.touch(now);
        }
        for k in issued {
            self.note(conn, Role::Receiver, LogEvent::Recv, Some(k));
        }
        self.ensure_check(conn);
    }

    fn head_outstanding(&self, conn: ConnId) -> bool {
        self.conns[conn.0]
            .recv_queue
            .front()
            .is_some_and(|t| self.transfers[t.0].receiver.outstanding())
    }

    /// Keeps exactly one stall check pending while requests are outstanding.
    fn ensure_check(&mut self, conn: ConnId) {
        let outstanding = self.head_outstanding(conn);
        let c = &self.conns[conn.0];
        if c.failed || c.check.is_some() || c.timer.probe_outstanding || !outstanding {
            return;
        }
        let at = c.timer.deadline().max(self.queue.now());
        let h = self
            .queue
            .schedule(Event::ReceiverCheck { conn }, at)
            .expect("future");
        self.conns[conn.0].check = Some(h);
    }

    pub(crate) fn on_receiver_check(&mut self, conn: ConnId) {
        self.conns[conn.0].check = None;
        if self.conns[conn.0].failed {
            return;
        }
        let now = self.queue.now();
        let outstanding = self.head_outstanding(conn);
        let c = &mut self.conns[conn.0];
        match c.timer.check(now, outstanding) {
            Action::SendCtsProbe => {
                let epoch = c.receiver_epoch;
                let qp = c.pair(role_of(epoch)).expect("active pair").receiver;
                let imm = Msg::Probe {
                    epoch: epoch_bits(epoch),
                }
                .encode();
                match self
                    .fabric
                    .post_send(&mut self.queue, qp, SendRequest::cts(imm))
                {
                    Ok(wr) => {
                        self.conns[conn.0].probe_wr = Some(wr);
                        self.tags.insert(wr, (conn, WrTag::Probe { epoch }));
                        self.note(conn, Role::Receiver, LogEvent::CtsProbe, None);
                    }
                    Err(_) => {
                        self.conns[conn.0].timer.probe_outstanding = false;
                        self.receiver_trigger(conn, SwitchReason::ProbeFailed);
                    }
                }
            }
            _ => self.ensure_check(conn),
        }
    }

    fn on_recv_wc(
        &mut self,
        conn: ConnId,
        tid: TransferId,
        chunk: u64,
        epoch: u32,
        wc: &WorkCompletion,
    ) {
        let c = &self.conns[conn.0];
        if c.failed || wc.status != WcStatus::Success || epoch != c.receiver_epoch {
            return;
        }
        let now = self.queue.now();
        let t = &mut self.transfers[tid.0];
        let expect = Msg::Data {
            epoch: epoch_bits(epoch),
            seq: t.seq as u16,
            chunk,
        };
        if Msg::decode(wc.imm) != Some(expect) {
            let got = Msg::decode(wc.imm);
            self.set_fatal(SimError::Invariant(format!(
                "{tid}: expected {expect:?}, landed {got:?}"
            )));
            return;
        }
        let range = match t.receiver.complete(chunk) {
            Ok(r) => r,
            Err(k) => {
                self.set_fatal(SimError::Invariant(format!(
                    "{tid}: chunk {k} completed twice"
                )));
                return;
            }
        };
        t.delivery.extend(range.clone());
        let complete = t.receiver.is_complete();
        if complete {
            t.received_at = Some(now);
        }
        self.conns[conn.0].timer.touch(now);
        for k in range {
            self.note(conn, Role::Receiver, LogEvent::Done, Some(k));
        }
        if complete {
            let q = &mut self.conns[conn.0].recv_queue;
            if let Some(i) = q.iter().position(|&x| x == tid) {
                q.remove(i);
            }
            self.pending.push_back(TransportEvent::Received {
                transfer: tid,
                at: now,
            });
        }
        self.pump_receiver(conn);
    }

    fn on_probe_wc(&mut self, conn: ConnId, epoch: u32, wc: &WorkCompletion) {
        let now = self.queue.now();
        let c = &mut self.conns[conn.0];
        if c.probe_wr == Some(wc.wr_id) {
            c.probe_wr = None;
        }
        if c.failed || epoch != c.receiver_epoch {
            return;
        }
        match c.timer.on_probe(now, wc.status) {
            Action::TriggerSwitch => {
                self.note(conn, Role::Receiver, LogEvent::CtsFail, None);
                self.receiver_trigger(conn, SwitchReason::ProbeFailed);
            }
            _ => {
                if wc.status == WcStatus::Success {
                    self.note(conn, Role::Receiver, LogEvent::CtsOk, None);
                }
                self.ensure_check(conn);
            }
        }
    }

    fn receiver_trigger(&mut self, conn: ConnId, reason: SwitchReason) {
        let c = &self.conns[conn.0];
        if c.failed {
            return;
        }
        if !self.cfg.failover || c.backup.is_none() {
            self.fail_connection(conn);
            return;
        }
        let target = other(c.active());
        self.receiver_switch(conn, target, reason);
    }

    /// Receiver-driven QP switch: flush the old QP, retreat `received` to
    /// `done`, push `done` to the sender over the target QP and re-arm the
    /// receive window there.
    pub(crate) fn receiver_switch(&mut self, conn: ConnId, target: QpRole, reason: SwitchReason) {
        let now = self.queue.now();
        let c = &mut self.conns[conn.0];
        let old = c.pair(c.active()).expect("active pair").receiver;
        let new = c.pair(target).expect("target pair").receiver;
        if let Some(h) = c.check.take() {
            self.queue.cancel(h);
        }
        c.timer.probe_outstanding = false;
        c.probe_wr = None;
        c.receiver_epoch += 1;
        let epoch = c.receiver_epoch;
        debug_assert_eq!(role_of(epoch), target);
        let head = c.recv_queue.front().copied();
        let next_seq = c.next_seq;
        self.fabric.move_to_error(&mut self.queue, old);
        self.fabric.reset_qp(now, old);
        if self.fabric.qp(new).state == QpState::Error {
            self.fabric.reset_qp(now, new);
        }
        let (seq, done) = match head {
            Some(tid) => {
                let t = &mut self.transfers[tid.0];
                (t.seq, t.receiver.retreat())
            }
            None => (next_seq, 0),
        };
        self.conns[conn.0].switches.push(SwitchRecord {
            time: now,
            to: target,
            reason,
            resume_chunk: done,
            transfer: head,
        });
        self.note(conn, Role::Receiver, switch_event(target), Some(done));
        let imm = Msg::Notice {
            epoch: epoch_bits(epoch),
            seq: seq as u16,
            done,
        }
        .encode();
        match self
            .fabric
            .post_send(&mut self.queue, new, SendRequest::cts(imm))
        {
            Ok(wr) => {
                self.tags.insert(wr, (conn, WrTag::Notice { epoch }));
            }
            Err(_) => {
                self.fail_connection(conn);
                return;
            }
        }
        self.pump_receiver(conn);
        if target == QpRole::Backup {
            self.schedule_monitor(conn);
        }
    }

    /// Same epoch, fresh start: flush the active QP, re-arm the receive
    /// window and tell the sender where to resume.
    fn resend_notice(&mut self, conn: ConnId) {
        let now = self.queue.now();
        let c = &mut self.conns[conn.0];
        if let Some(h) = c.check.take() {
            self.queue.cancel(h);
        }
        c.timer.probe_outstanding = false;
        c.probe_wr = None;
        let epoch = c.receiver_epoch;
        let qp = c.pair(c.active()).expect("active pair").receiver;
        let head = c.recv_queue.front().copied();
        let next_seq = c.next_seq;
        self.fabric.move_to_error(&mut self.queue, qp);
        self.fabric.reset_qp(now, qp);
        let (seq, done) = match head {
            Some(tid) => {
                let t = &mut self.transfers[tid.0];
                (t.seq, t.receiver.retreat())
            }
            None => (next_seq, 0),
        };
        let imm = Msg::Notice {
            epoch: epoch_bits(epoch),
            seq: seq as u16,
            done,
        }
        .encode();
        match self
            .fabric
            .post_send(&mut self.queue, qp, SendRequest::cts(imm))
        {
            Ok(wr) => {
                self.tags.insert(wr, (conn, WrTag::Notice { epoch }));
            }
            Err(_) => {
                self.fail_connection(conn);
                return;
            }
        }
        self.pump_receiver(conn);
    }

    fn schedule_monitor(&mut self, conn: ConnId) {
        let c = &mut self.conns[conn.0];
        if c.monitor_pending || c.failed {
            return;
        }
        c.monitor_pending = true;
        let at = self.queue.now() + SimTime(self.cfg.probe_period_ns);
        self.queue
            .schedule(Event::ProbePrimary { conn }, at)
            .expect("future");
    }

    /// Periodic look at the failed primary while running on the backup.
    pub(crate) fn on_probe_primary(&mut self, conn: ConnId) {
        let c = &mut self.conns[conn.0];
        c.monitor_pending = false;
        if c.failed || c.active() != QpRole::Backup {
            return;
        }
        let primary = c.primary.receiver;
        if self.fabric.path_up(primary) {
            self.receiver_switch(conn, QpRole::Primary, SwitchReason::PrimaryRestored);
        } else {
            self.schedule_monitor(conn);
        }
    }

    fn fail_connection(&mut self, conn: ConnId) {
        let now = self.queue.now();
        let c = &mut self.conns[conn.0];
        if c.failed {
            return;
        }
        c.failed = true;
        if let Some(h) = c.check.take() {
            self.queue.cancel(h);
        }
        let mut ids: Vec<TransferId> = c
            .send_queue
            .drain(..)
            .chain(c.recv_queue.drain(..))
            .collect();
        ids.sort();
        ids.dedup();
        for tid in ids {
            self.transfers[tid.0].status = TransferStatus::Failed;
        }
        self.fabric
            .trace_mut()
            .push(now, "connection_failed", conn.to_string(), "");
        self.pending
            .push_back(TransportEvent::ConnectionFailed { conn, at: now });
    }

    // ---- dispatch ----

    pub(crate) fn on_wc(&mut self, wc: WorkCompletion) {
        let Some((conn, tag)) = self.tags.remove(&wc.wr_id) else {
            return;
        };
        match tag {
            WrTag::Data {
                transfer,
                chunk,
                epoch,
            } => self.on_data_wc(conn, transfer, chunk, epoch, &wc),
            WrTag::Recv {
                transfer,
                chunk,
                epoch,
            } => self.on_recv_wc(conn, transfer, chunk, epoch, &wc),
            WrTag::Probe { epoch } => self.on_probe_wc(conn, epoch, &wc),
            WrTag::Cts { epoch } => {
                let c = &self.conns[conn.0];
                if wc.status == WcStatus::RetryExceeded && epoch == c.receiver_epoch && !c.failed {
                    self.note(conn, Role::Receiver, LogEvent::CtsFail, None);
                    self.receiver_trigger(conn, SwitchReason::CtsFailed);
                }
            }
            WrTag::Notice { epoch } => match wc.status {
                WcStatus::Success => self.conns[conn.0].dead_since = None,
                WcStatus::RetryExceeded => {
                    let c = &self.conns[conn.0];
                    if epoch == c.receiver_epoch && self.control_lost(conn) {
                        let target = other(self.conns[conn.0].active());
                        self.receiver_switch(conn, target, SwitchReason::NoticeFailed);
                    }
                }
                _ => {}
            },
            WrTag::Request { via } => {
                // keep the QP able to hear a later notice
                let qp = self.conns[conn.0].pair(via).expect("pair exists").sender;
                if self.fabric.qp(qp).state == QpState::Error {
                    self.fabric.reset_qp(self.queue.now(), qp);
                }
                match wc.status {
                    WcStatus::Success => self.conns[conn.0].dead_since = None,
                    WcStatus::RetryExceeded
                        if self.conns[conn.0].sender_paused && self.control_lost(conn) =>
                    {
                        self.send_request(conn, other(via));
                    }
                    _ => {}
                }
            }
        }
    }

    pub(crate) fn on_inbound(&mut self, qp: crate::verbs::QpId, imm: u64) {
        let Some(&conn) = self.qp_owner.get(&qp) else {
            return;
        };
        let c = &self.conns[conn.0];
        if c.failed {
            return;
        }
        let sender_side = c.primary.sender == qp || c.backup.is_some_and(|p| p.sender == qp);
        match (Msg::decode(imm), sender_side) {
            (Some(Msg::Cts { epoch, seq, chunk }), true) => {
                let hit = c
                    .send_queue
                    .iter()
                    .copied()
                    .find(|t| self.transfers[t.0].seq as u16 == seq);
                if let Some(tid) = hit {
                    self.transfers[tid.0].cts.insert((epoch, chunk));
                    if epoch == epoch_bits(c.sender_epoch) {
                        self.pump_sender(conn);
                    }
                }
            }
            (Some(Msg::Notice { epoch, seq, done }), true) => {
                self.sender_adopt(conn, epoch, seq, done)
            }
            (Some(Msg::Request { epoch }), false) => {
                if epoch == epoch_bits(c.receiver_epoch) {
                    self.receiver_trigger(conn, SwitchReason::SenderRetryExceeded);
                } else if self.cfg.reconnect_window_ns > 0 {
                    // The sender missed our last notice; answer over the QP that reached us.
                    let via = if c.primary.receiver == qp {
                        QpRole::Primary
                    } else {
                        QpRole::Backup
                    };
                    if via == c.active() {
                        self.resend_notice(conn);
                    } else {
                        self.receiver_switch(conn, via, SwitchReason::NoticeFailed);
                    }
                }
            }
            _ => {}
        }
    }
}
