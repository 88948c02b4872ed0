//! Simulated RNICs: reliable-connected queue pairs over the fluid network.
//!
//! A QP transmits its send queue in order, one payload at a time. A payload
//! reaches the peer one path delay after its flow drains, and the sender's
//! completion arrives one more (reverse) path delay later. A request that
//! cannot make progress because a link is down fails with `RetryExceeded`
//! once the QP's retry timeout elapses, which moves the QP to Error and
//! flushes everything else it holds.

use std::collections::{BTreeMap, VecDeque};

use super::types::*;
use crate::error::SimError;
use crate::netsim::{
    EventHandle, EventQueue, FlowId, FlowNetwork, LinkId, NicPortId, PortState, Topology, Trace,
};
use crate::time::SimTime;

/// Lets the fabric put its events on a queue owned by an upper layer.
pub trait Scheduler<Ev> {
    fn now(&self) -> SimTime;
    fn schedule_at(&mut self, at: SimTime, ev: Ev) -> EventHandle;
    fn cancel(&mut self, handle: EventHandle);
}

impl<E, Ev: Into<E>> Scheduler<Ev> for EventQueue<E> {
    fn now(&self) -> SimTime {
        EventQueue::now(self)
    }

    fn schedule_at(&mut self, at: SimTime, ev: Ev) -> EventHandle {
        let at = at.max(EventQueue::now(self));
        self.schedule(ev.into(), at).expect("clamped to now")
    }

    fn cancel(&mut self, handle: EventHandle) {
        EventQueue::cancel(self, handle)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FabricEvent {
    NetTick {
        generation: u64,
    },
    Arrive {
        qp: QpId,
        wr: WrId,
    },
    Ack {
        qp: QpId,
        wr: WrId,
        status: WcStatus,
    },
    RetryExpired {
        qp: QpId,
        wr: WrId,
    },
}

/// Notifications for the layer above.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FabricOutput {
    CqUpdated(CqId),
    /// A zero-payload control message reached `qp`.
    Inbound {
        qp: QpId,
        imm: u64,
    },
    PortChanged {
        port: NicPortId,
        state: PortState,
    },
}

/// Parameters of a send-side work request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendRequest {
    pub direction: WrDirection,
    pub region: Option<MrId>,
    pub offset: u64,
    pub length: u64,
    pub imm: u64,
}

impl SendRequest {
    pub fn data(region: MrId, offset: u64, length: u64, imm: u64) -> Self {
        SendRequest {
            direction: WrDirection::Send,
            region: Some(region),
            offset,
            length,
            imm,
        }
    }

    pub fn cts(imm: u64) -> Self {
        SendRequest {
            direction: WrDirection::Cts,
            region: None,
            offset: 0,
            length: 0,
            imm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Queued,
    Transmitting(FlowId),
    /// Blocked by a down link before or during transmission.
    Stalled(EventHandle),
    /// Payload or acknowledgement travelling.
    InFlight,
    /// Delivered, but the acknowledgement cannot get back.
    AckStalled(EventHandle),
}

#[derive(Debug, Clone)]
struct SendSlot {
    wr: WorkRequest,
    phase: Phase,
}

#[derive(Debug, Clone)]
struct QpRuntime {
    qp: QueuePair,
    sends: VecDeque<SendSlot>,
    recvs: VecDeque<WorkRequest>,
}

pub struct Fabric {
    net: FlowNetwork,
    qps: Vec<QpRuntime>,
    cqs: Vec<CompletionQueue>,
    regions: Vec<MemoryRegion>,
    next_wr: u64,
    flow_owner: BTreeMap<FlowId, (QpId, WrId)>,
    tick: Option<EventHandle>,
    generation: u64,
    trace: Trace,
    outputs: Vec<FabricOutput>,
    fatal: Option<SimError>,
}

impl Fabric {
    pub fn new(topo: Topology, trace: Trace) -> Self {
        Fabric {
            net: FlowNetwork::new(topo),
            qps: Vec::new(),
            cqs: Vec::new(),
            regions: Vec::new(),
            next_wr: 0,
            flow_owner: BTreeMap::new(),
            tick: None,
            generation: 0,
            trace,
            outputs: Vec::new(),
            fatal: None,
        }
    }

    pub fn topology(&self) -> &Topology {
        self.net.topology()
    }

    pub fn network(&self) -> &FlowNetwork {
        &self.net
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut Trace {
        &mut self.trace
    }

    /// First unrecoverable error (CQ overflow), if any.
    pub fn fatal(&self) -> Option<&SimError> {
        self.fatal.as_ref()
    }

    pub fn take_outputs(&mut self) -> Vec<FabricOutput> {
        std::mem::take(&mut self.outputs)
    }

    pub fn register_region(
        &mut self,
        owner: RegionOwner,
        length: u64,
        kind: RegionKind,
        seed: u64,
    ) -> MrId {
        let id = MrId(self.regions.len());
        self.regions
            .push(MemoryRegion::new(id, owner, length, kind, seed));
        id
    }

    pub fn deregister_region(&mut self, id: MrId) {
        if let Some(r) = self.regions.get_mut(id.0) {
            r.registered = false;
        }
    }

    pub fn region(&self, id: MrId) -> &MemoryRegion {
        &self.regions[id.0]
    }

    pub fn create_cq(&mut self, capacity: usize) -> CqId {
        let id = CqId(self.cqs.len());
        self.cqs.push(CompletionQueue::new(id, capacity));
        id
    }

    pub fn cq(&self, id: CqId) -> &CompletionQueue {
        &self.cqs[id.0]
    }

    /// Creates a connected QP pair between two endpoints.
    pub fn connect(
        &mut self,
        a: Endpoint,
        b: Endpoint,
        role: QpRole,
        config: QpConfig,
        cq_a: CqId,
        cq_b: CqId,
    ) -> Result<(QpId, QpId), SimError> {
        let ab = self.topology().path(a.node, b.node)?;
        let ba = self.topology().path(b.node, a.node)?;
        let (qa, qb) = (QpId(self.qps.len()), QpId(self.qps.len() + 1));
        for (id, local, remote, remote_qp, cq, path) in
            [(qa, a, b, qb, cq_a, ab), (qb, b, a, qa, cq_b, ba)]
        {
            self.qps.push(QpRuntime {
                qp: QueuePair {
                    id,
                    local,
                    remote,
                    remote_qp,
                    role,
                    state: QpState::Connected,
                    cq,
                    config,
                    path,
                },
                sends: VecDeque::new(),
                recvs: VecDeque::new(),
            });
        }
        Ok((qa, qb))
    }

    pub fn qp(&self, id: QpId) -> &QueuePair {
        &self.qps[id.0].qp
    }

    pub fn retry_timeout(&self, id: QpId) -> SimTime {
        self.qps[id.0].qp.retry_timeout()
    }

    /// Outstanding send-side and receive-side requests.
    pub fn outstanding(&self, id: QpId) -> (usize, usize) {
        let q = &self.qps[id.0];
        (q.sends.len(), q.recvs.len())
    }

    /// Port-state query for both directions of the QP's route.
    pub fn path_up(&self, id: QpId) -> bool {
        let q = &self.qps[id.0].qp;
        let topo = self.topology();
        topo.path_is_up(&q.path) && topo.path_is_up(&self.qps[q.remote_qp.0].qp.path)
    }

    fn check_region(&self, region: MrId, offset: u64, length: u64) -> Result<(), SimError> {
        let r = self
            .regions
            .get(region.0)
            .ok_or(SimError::UnregisteredRegion(region.0))?;
        if !r.registered {
            return Err(SimError::UnregisteredRegion(region.0));
        }
        if offset + length > r.length {
            return Err(SimError::RegionOutOfBounds {
                offset,
                length,
                region_len: r.length,
            });
        }
        Ok(())
    }

    fn alloc_wr(&mut self) -> WrId {
        let id = WrId(self.next_wr);
        self.next_wr += 1;
        id
    }

    pub fn post_send<S: Scheduler<FabricEvent>>(
        &mut self,
        sched: &mut S,
        qp: QpId,
        req: SendRequest,
    ) -> Result<WrId, SimError> {
        if self.qps[qp.0].qp.state != QpState::Connected {
            return Err(SimError::QpInErrorState(qp));
        }
        match (req.direction, req.region) {
            (WrDirection::Send, Some(r)) => self.check_region(r, req.offset, req.length)?,
            (WrDirection::Send, None) => return Err(SimError::UnregisteredRegion(usize::MAX)),
            (WrDirection::Cts, _) => {}
            (WrDirection::Recv, _) => panic!("receive requests go through post_recv"),
        }
        let now = sched.now();
        let wr_id = self.alloc_wr();
        let wr = WorkRequest {
            wr_id,
            qp,
            direction: req.direction,
            region: req.region,
            offset: req.offset,
            length: if req.direction == WrDirection::Cts {
                0
            } else {
                req.length
            },
            imm: req.imm,
            post_time: now,
        };
        self.trace.detail(
            now,
            "post_send",
            qp.to_string(),
            format!("wr={};len={};imm={}", wr_id.0, wr.length, wr.imm),
        );
        self.qps[qp.0].sends.push_back(SendSlot {
            wr,
            phase: Phase::Queued,
        });
        self.try_transmit(sched, qp);
        self.rearm(sched);
        Ok(wr_id)
    }

    pub fn post_recv(
        &mut self,
        now: SimTime,
        qp: QpId,
        region: MrId,
        offset: u64,
        length: u64,
    ) -> Result<WrId, SimError> {
        if self.qps[qp.0].qp.state != QpState::Connected {
            return Err(SimError::QpInErrorState(qp));
        }
        self.check_region(region, offset, length)?;
        let wr_id = self.alloc_wr();
        self.trace.detail(
            now,
            "post_recv",
            qp.to_string(),
            format!("wr={};len={length}", wr_id.0),
        );
        self.qps[qp.0].recvs.push_back(WorkRequest {
            wr_id,
            qp,
            direction: WrDirection::Recv,
            region: Some(region),
            offset,
            length,
            imm: 0,
            post_time: now,
        });
        Ok(wr_id)
    }

    pub fn poll_cq(&mut self, cq: CqId, max: usize) -> Vec<WorkCompletion> {
        assert!(max >= 1, "poll_cq needs max >= 1");
        self.cqs[cq.0].poll(max)
    }

    fn push_wc(&mut self, now: SimTime, wr: &WorkRequest, status: WcStatus, bytes: u64, imm: u64) {
        let cq = self.qps[wr.qp.0].qp.cq;
        let wc = WorkCompletion {
            wr_id: wr.wr_id,
            qp: wr.qp,
            direction: wr.direction,
            status,
            post_time: wr.post_time,
            completion_time: now,
            bytes,
            imm,
        };
        self.trace.detail(
            now,
            "wc",
            wr.qp.to_string(),
            format!("wr={};{status:?};bytes={bytes}", wr.wr_id.0),
        );
        if let Err(e) = self.cqs[cq.0].push(wc) {
            self.fatal.get_or_insert(e);
        }
        self.outputs.push(FabricOutput::CqUpdated(cq));
    }

    fn rearm<S: Scheduler<FabricEvent>>(&mut self, sched: &mut S) {
        let next = self.net.next_completion().map(|(t, _)| t);
        if let Some(h) = self.tick.take() {
            sched.cancel(h);
        }
        self.generation += 1;
        if let Some(at) = next {
            self.tick = Some(sched.schedule_at(
                at,
                FabricEvent::NetTick {
                    generation: self.generation,
                },
            ));
        }
    }

    /// Starts transmission of queued requests at the head of the send queue.
    fn try_transmit<S: Scheduler<FabricEvent>>(&mut self, sched: &mut S, qp: QpId) {
        let now = sched.now();
        let path_up = self.topology().path_is_up(&self.qps[qp.0].qp.path);
        let delay = self.qps[qp.0].qp.path.delay;
        let rto = self.qps[qp.0].qp.retry_timeout();
        loop {
            let q = &self.qps[qp.0];
            if q.sends
                .iter()
                .any(|s| matches!(s.phase, Phase::Transmitting(_) | Phase::Stalled(_)))
            {
                return;
            }
            let Some(i) = q.sends.iter().position(|s| s.phase == Phase::Queued) else {
                return;
            };
            let wr = q.sends[i].wr.clone();
            if !path_up {
                let h =
                    sched.schedule_at(now + rto, FabricEvent::RetryExpired { qp, wr: wr.wr_id });
                self.qps[qp.0].sends[i].phase = Phase::Stalled(h);
                return;
            }
            if wr.length > 0 {
                let path = self.qps[qp.0].qp.path.links.clone();
                let fid = self.net.start_flow(path, wr.length, now);
                self.flow_owner.insert(fid, (qp, wr.wr_id));
                self.qps[qp.0].sends[i].phase = Phase::Transmitting(fid);
                return;
            }
            self.qps[qp.0].sends[i].phase = Phase::InFlight;
            sched.schedule_at(now + delay, FabricEvent::Arrive { qp, wr: wr.wr_id });
        }
    }

    fn slot_index(&self, qp: QpId, wr: WrId) -> Option<usize> {
        self.qps[qp.0].sends.iter().position(|s| s.wr.wr_id == wr)
    }

    pub fn handle<S: Scheduler<FabricEvent>>(&mut self, sched: &mut S, ev: FabricEvent) {
        let now = sched.now();
        match ev {
            FabricEvent::NetTick { generation } => {
                if generation != self.generation {
                    return;
                }
                self.tick = None;
                while let Some((at, fid)) = self.net.next_completion() {
                    if at > now {
                        break;
                    }
                    self.net.complete_flow(fid, now);
                    let Some((qp, wr)) = self.flow_owner.remove(&fid) else {
                        continue;
                    };
                    if let Some(i) = self.slot_index(qp, wr) {
                        self.qps[qp.0].sends[i].phase = Phase::InFlight;
                        let delay = self.qps[qp.0].qp.path.delay;
                        sched.schedule_at(now + delay, FabricEvent::Arrive { qp, wr });
                    }
                    self.try_transmit(sched, qp);
                }
            }
            FabricEvent::Arrive { qp, wr } => self.on_arrive(sched, qp, wr),
            FabricEvent::Ack { qp, wr, status } => {
                if let Some(i) = self.slot_index(qp, wr) {
                    let slot = self.qps[qp.0].sends.remove(i).expect("indexed");
                    let bytes = if status == WcStatus::Success {
                        slot.wr.length
                    } else {
                        0
                    };
                    self.push_wc(now, &slot.wr, status, bytes, slot.wr.imm);
                }
            }
            FabricEvent::RetryExpired { qp, wr } => {
                let Some(i) = self.slot_index(qp, wr) else {
                    return;
                };
                if !matches!(
                    self.qps[qp.0].sends[i].phase,
                    Phase::Stalled(_) | Phase::AckStalled(_)
                ) {
                    return;
                }
                let slot = self.qps[qp.0].sends.remove(i).expect("indexed");
                self.push_wc(now, &slot.wr, WcStatus::RetryExceeded, 0, slot.wr.imm);
                self.move_to_error(sched, qp);
            }
        }
        self.rearm(sched);
    }

    fn on_arrive<S: Scheduler<FabricEvent>>(&mut self, sched: &mut S, qp: QpId, wr: WrId) {
        let now = sched.now();
        let Some(i) = self.slot_index(qp, wr) else {
            return;
        };
        let swr = self.qps[qp.0].sends[i].wr.clone();
        let remote = self.qps[qp.0].qp.remote_qp;
        let back_delay = self.qps[remote.0].qp.path.delay;

        let accepted = if self.qps[remote.0].qp.state != QpState::Connected {
            false
        } else {
            match swr.direction {
                WrDirection::Send => match self.qps[remote.0].recvs.pop_front() {
                    Some(rwr) if rwr.length >= swr.length => {
                        let src = swr.region.expect("send carries a region");
                        let digest = self.regions[src.0].source_digest(swr.offset, swr.length);
                        let dst = rwr.region.expect("recv carries a region");
                        self.regions[dst.0].write(rwr.offset, swr.length, digest);
                        self.push_wc(now, &rwr, WcStatus::Success, swr.length, swr.imm);
                        true
                    }
                    Some(rwr) => {
                        // Too small: the receive is consumed and fails.
                        self.push_wc(now, &rwr, WcStatus::Flushed, 0, swr.imm);
                        false
                    }
                    None => false,
                },
                WrDirection::Cts => {
                    self.outputs.push(FabricOutput::Inbound {
                        qp: remote,
                        imm: swr.imm,
                    });
                    true
                }
                WrDirection::Recv => unreachable!("recv requests never travel"),
            }
        };

        if !accepted {
            self.trace
                .detail(now, "drop", qp.to_string(), format!("wr={}", wr.0));
            sched.schedule_at(
                now + back_delay,
                FabricEvent::Ack {
                    qp,
                    wr,
                    status: WcStatus::Flushed,
                },
            );
            return;
        }
        if self.topology().path_is_up(&self.qps[remote.0].qp.path) {
            sched.schedule_at(
                now + back_delay,
                FabricEvent::Ack {
                    qp,
                    wr,
                    status: WcStatus::Success,
                },
            );
        } else {
            let rto = self.qps[qp.0].qp.retry_timeout();
            let h = sched.schedule_at(now + rto, FabricEvent::RetryExpired { qp, wr });
            self.qps[qp.0].sends[i].phase = Phase::AckStalled(h);
        }
    }

    /// Moves a QP to Error, flushing every outstanding request.
    pub fn move_to_error<S: Scheduler<FabricEvent>>(&mut self, sched: &mut S, qp: QpId) {
        let now = sched.now();
        if self.qps[qp.0].qp.state == QpState::Error {
            return;
        }
        self.qps[qp.0].qp.state = QpState::Error;
        self.trace.push(now, "qp_state", qp.to_string(), "Error");
        let sends: Vec<SendSlot> = self.qps[qp.0].sends.drain(..).collect();
        for s in sends {
            match s.phase {
                Phase::Transmitting(fid) => {
                    self.net.cancel_flow(fid, now);
                    self.flow_owner.remove(&fid);
                }
                Phase::Stalled(h) | Phase::AckStalled(h) => sched.cancel(h),
                Phase::Queued | Phase::InFlight => {}
            }
            self.push_wc(now, &s.wr, WcStatus::Flushed, 0, s.wr.imm);
        }
        let recvs: Vec<WorkRequest> = self.qps[qp.0].recvs.drain(..).collect();
        for r in recvs {
            self.push_wc(now, &r, WcStatus::Flushed, 0, 0);
        }
        self.rearm(sched);
    }

    /// Error -> Reset -> RTS. The QP keeps its peer and route.
    pub fn reset_qp(&mut self, now: SimTime, qp: QpId) {
        let q = &mut self.qps[qp.0];
        if q.qp.state == QpState::Error {
            debug_assert!(q.sends.is_empty() && q.recvs.is_empty());
            q.qp.state = QpState::Connected;
            self.trace
                .push(now, "qp_state", qp.to_string(), "Connected");
        }
    }

    /// Applies a port state change and updates every affected request.
    pub fn apply_fault<S: Scheduler<FabricEvent>>(
        &mut self,
        sched: &mut S,
        port: NicPortId,
        state: PortState,
    ) -> Result<(), SimError> {
        let now = sched.now();
        let effect = self.net.apply_fault(port, state, now)?;
        self.trace
            .push(now, "port_state", port.to_string(), format!("{state:?}"));
        self.outputs.push(FabricOutput::PortChanged { port, state });

        for fid in effect.suspended {
            if let Some((qp, wr)) = self.flow_owner.remove(&fid) {
                self.net.cancel_flow(fid, now);
                let rto = self.qps[qp.0].qp.retry_timeout();
                let h = sched.schedule_at(now + rto, FabricEvent::RetryExpired { qp, wr });
                if let Some(i) = self.slot_index(qp, wr) {
                    self.qps[qp.0].sends[i].phase = Phase::Stalled(h);
                }
            }
        }
        if state == PortState::Up {
            for q in 0..self.qps.len() {
                let qp = QpId(q);
                let fwd_up = self.topology().path_is_up(&self.qps[q].qp.path);
                let remote = self.qps[q].qp.remote_qp;
                let back_up = self.topology().path_is_up(&self.qps[remote.0].qp.path);
                let back_delay = self.qps[remote.0].qp.path.delay;
                let mut restart = false;
                for s in self.qps[q].sends.iter_mut() {
                    match s.phase {
                        Phase::Stalled(h) if fwd_up => {
                            sched.cancel(h);
                            s.phase = Phase::Queued;
                            restart = true;
                        }
                        Phase::AckStalled(h) if back_up => {
                            sched.cancel(h);
                            s.phase = Phase::InFlight;
                            sched.schedule_at(
                                now + back_delay,
                                FabricEvent::Ack {
                                    qp,
                                    wr: s.wr.wr_id,
                                    status: WcStatus::Success,
                                },
                            );
                        }
                        _ => {}
                    }
                }
                if restart {
                    self.try_transmit(sched, qp);
                }
            }
        }
        self.rearm(sched);
        Ok(())
    }

    /// Starts a flow no QP owns, e.g. competing traffic. It pauses while
    /// its path is down and never produces completions.
    pub fn start_background_flow<S: Scheduler<FabricEvent>>(
        &mut self,
        sched: &mut S,
        links: Vec<LinkId>,
        bytes: u64,
    ) -> FlowId {
        let fid = self.net.start_flow(links, bytes, sched.now());
        self.rearm(sched);
        fid
    }

    /// Bytes of completed flows per link.
    pub fn link_bytes(&self) -> &[u64] {
        self.net.link_bytes()
    }
}
