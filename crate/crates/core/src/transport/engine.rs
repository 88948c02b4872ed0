//! Transfer engine: owns the event queue, the verbs fabric, connections and
//! transfers, and routes fabric completions to the protocol handlers.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::mode::StageCosts;
use super::msg::WrTag;
use super::state::{ReceiverProgress, ReceiverTimer, Role, SenderProgress};
use crate::error::SimError;
use crate::netsim::{
    EventHandle, EventQueue, FaultScript, GpuId, LinkId, NicPortId, Node, PortState, Topology,
    Trace, TraceLevel,
};
use crate::time::SimTime;
use crate::verbs::*;

/// Largest chunk count a single message may have.
pub const MAX_CHUNKS: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub chunk_size: u64,
    /// QPs per connection: 1 = primary only, 2 = primary + backup.
    pub qp_number: usize,
    /// Receive requests kept posted ahead of `done`.
    pub window: usize,
    /// Staging buffers per connection in StagedCopy mode.
    pub staging_slots: usize,
    pub timeout_exponent: u32,
    pub retry_count: u32,
    /// Off reproduces the baseline: any retry exhaustion fails the connection.
    pub failover: bool,
    /// Receiver stall threshold; defaults to retry timeout + 2 × max path delay.
    pub delta_ns: Option<u64>,
    pub probe_period_ns: u64,
    /// How long a connection keeps alternating between its QPs after a
    /// switch message fails on both. Zero fails it on the first such loss.
    pub reconnect_window_ns: u64,
    pub stage_costs: StageCosts,
    /// Record post/transmit/ack/recv/done rows in the event log.
    pub chunk_log: bool,
    /// Keep a `MessageRecord` per data completion for the throughput monitor.
    pub record_messages: bool,
    pub trace_level: TraceLevel,
}

impl Default for TransportConfig {
    fn default() -> Self {
        let qp = QpConfig::default();
        TransportConfig {
            chunk_size: 4 << 20,
            qp_number: 2,
            window: 8,
            staging_slots: 1,
            timeout_exponent: qp.timeout_exponent,
            retry_count: qp.retry_count,
            failover: true,
            delta_ns: None,
            probe_period_ns: 500_000_000,
            reconnect_window_ns: 0,
            stage_costs: StageCosts::default(),
            chunk_log: true,
            record_messages: true,
            trace_level: TraceLevel::Events,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.chunk_size == 0 {
            return bad("chunk_size must be positive");
        }
        if !(1..=2).contains(&self.qp_number) {
            return bad("qp_number must be 1 or 2");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        if self.staging_slots == 0 {
            return bad("staging_slots must be positive");
        }
        if self.timeout_exponent > 31 {
            return bad("timeout_exponent must be at most 31");
        }
        if self.probe_period_ns == 0 {
            return bad("probe_period_ns must be positive");
        }
        Ok(())
    }

    pub fn qp_config(&self) -> QpConfig {
        QpConfig {
            timeout_exponent: self.timeout_exponent,
            retry_count: self.retry_count,
        }
    }
}

macro_rules! handle_id {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        pub struct $name(pub usize);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

handle_id!(ConnId, "conn");
handle_id!(TransferId, "xfer");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QpPair {
    pub sender: QpId,
    pub receiver: QpId,
    pub src_port: Option<NicPortId>,
    pub dst_port: Option<NicPortId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SwitchReason {
    SenderRetryExceeded,
    CtsFailed,
    ProbeFailed,
    /// The switch message itself was lost; trying the other QP.
    NoticeFailed,
    PrimaryRestored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SwitchRecord {
    pub time: SimTime,
    pub to: QpRole,
    pub reason: SwitchReason,
    /// Receiver's `done` for the head transfer when the switch ran.
    pub resume_chunk: u64,
    pub transfer: Option<TransferId>,
}

/// One data message as the sender observed it: posted at `t1`, its
/// completion polled at `t2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MessageRecord {
    pub wr_id: WrId,
    pub size: u64,
    pub t1: SimTime,
    pub t2: SimTime,
}

pub(crate) fn role_of(epoch: u32) -> QpRole {
    if epoch.is_multiple_of(2) {
        QpRole::Primary
    } else {
        QpRole::Backup
    }
}

#[derive(Debug, Clone)]
pub struct Connection {
    pub id: ConnId,
    pub src: GpuId,
    pub dst: GpuId,
    pub primary: QpPair,
    pub backup: Option<QpPair>,
    pub failed: bool,
    pub switches: Vec<SwitchRecord>,
    pub messages: Vec<MessageRecord>,
    pub(crate) sender_epoch: u32,
    pub(crate) sender_paused: bool,
    pub(crate) send_queue: VecDeque<TransferId>,
    pub(crate) receiver_epoch: u32,
    pub(crate) recv_queue: VecDeque<TransferId>,
    pub(crate) timer: ReceiverTimer,
    pub(crate) check: Option<EventHandle>,
    pub(crate) probe_wr: Option<WrId>,
    pub(crate) monitor_pending: bool,
    /// First failed switch message since the last one that got through.
    pub(crate) dead_since: Option<SimTime>,
    pub(crate) next_seq: u32,
}

impl Connection {
    /// The QP the receiver currently drives.
    pub fn active(&self) -> QpRole {
        role_of(self.receiver_epoch)
    }

    pub fn sender_active(&self) -> QpRole {
        role_of(self.sender_epoch)
    }

    pub fn pair(&self, role: QpRole) -> Option<&QpPair> {
        match role {
            QpRole::Primary => Some(&self.primary),
            QpRole::Backup => self.backup.as_ref(),
        }
    }

    pub fn epoch(&self) -> u32 {
        self.receiver_epoch
    }

    pub fn is_idle(&self) -> bool {
        self.send_queue.is_empty() && self.recv_queue.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TransferStatus {
    InProgress,
    Completed,
    Failed,
}

#[derive(Debug, Clone)]
pub struct Transfer {
    pub id: TransferId,
    pub conn: ConnId,
    pub length: u64,
    pub chunk_size: u64,
    pub src_region: MrId,
    pub dst_region: MrId,
    pub sender: SenderProgress,
    pub receiver: ReceiverProgress,
    pub status: TransferStatus,
    pub created_at: SimTime,
    pub received_at: Option<SimTime>,
    pub completed_at: Option<SimTime>,
    /// Chunks in the order `done` covered them.
    pub delivery: Vec<u64>,
    /// `(epoch, chunk)` for every data post.
    pub transmissions: Vec<(u32, u64)>,
    /// Chunks re-sent because a switch discarded them.
    pub retransmitted: u64,
    pub(crate) seq: u32,
    pub(crate) sender_ready: bool,
    pub(crate) prep_busy: bool,
    pub(crate) prepared: u64,
    pub(crate) copy_busy: bool,
    pub(crate) copied: u64,
    pub(crate) slots_used: usize,
    pub(crate) copy_gen: u64,
    pub(crate) cts: BTreeSet<(u32, u64)>,
}

impl Transfer {
    pub fn total_chunks(&self) -> u64 {
        self.sender.total
    }

    pub fn chunk_len(&self, k: u64) -> u64 {
        (self.length - k * self.chunk_size).min(self.chunk_size)
    }

    pub fn duration(&self) -> Option<SimTime> {
        self.completed_at.map(|t| t - self.created_at)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Integrity {
    pub checksum_match: bool,
    /// `delivery` is exactly `0..total_chunks`.
    pub exactly_once_in_order: bool,
    pub bytes_written: u64,
}

impl Integrity {
    pub fn ok(&self) -> bool {
        self.checksum_match && self.exactly_once_in_order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LogEvent {
    Post,
    Transmit,
    Ack,
    Recv,
    Done,
    SwitchToBackup,
    SwitchToPrimary,
    CtsProbe,
    CtsOk,
    CtsFail,
}

impl LogEvent {
    pub fn name(self) -> &'static str {
        match self {
            LogEvent::Post => "post",
            LogEvent::Transmit => "transmit",
            LogEvent::Ack => "ack",
            LogEvent::Recv => "recv",
            LogEvent::Done => "done",
            LogEvent::SwitchToBackup => "switch_to_backup",
            LogEvent::SwitchToPrimary => "switch_to_primary",
            LogEvent::CtsProbe => "cts_probe",
            LogEvent::CtsOk => "cts_ok",
            LogEvent::CtsFail => "cts_fail",
        }
    }

    pub(crate) fn per_chunk(self) -> bool {
        matches!(
            self,
            LogEvent::Post | LogEvent::Transmit | LogEvent::Ack | LogEvent::Recv | LogEvent::Done
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub time: SimTime,
    pub conn: ConnId,
    pub role: Role,
    pub event: LogEvent,
    pub chunk: Option<u64>,
}

/// Notifications handed to the layer driving the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportEvent {
    /// Every chunk landed at the receiver.
    Received {
        transfer: TransferId,
        at: SimTime,
    },
    /// The sender holds acknowledgements for every chunk.
    Completed {
        transfer: TransferId,
        at: SimTime,
    },
    ConnectionFailed {
        conn: ConnId,
        at: SimTime,
    },
    Wake {
        token: u64,
        at: SimTime,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Fabric(FabricEvent),
    Fault {
        port: NicPortId,
        state: PortState,
    },
    Background {
        links: Vec<LinkId>,
        bytes: u64,
    },
    Prepared {
        transfer: TransferId,
    },
    Copied {
        transfer: TransferId,
        generation: u64,
    },
    ReceiverCheck {
        conn: ConnId,
    },
    ProbePrimary {
        conn: ConnId,
    },
    Release {
        transfer: TransferId,
    },
    Wake {
        token: u64,
    },
}

impl From<FabricEvent> for Event {
    fn from(e: FabricEvent) -> Self {
        Event::Fabric(e)
    }
}

pub struct TransportEngine {
    pub(crate) cfg: TransportConfig,
    pub(crate) queue: EventQueue<Event>,
    pub(crate) fabric: Fabric,
    pub(crate) conns: Vec<Connection>,
    pub(crate) transfers: Vec<Transfer>,
    pub(crate) tags: HashMap<WrId, (ConnId, WrTag)>,
    pub(crate) qp_owner: HashMap<QpId, ConnId>,
    pub(crate) log: Vec<LogRecord>,
    pub(crate) pending: VecDeque<TransportEvent>,
    pub(crate) delta: SimTime,
    pub(crate) fatal: Option<SimError>,
}

impl TransportEngine {
    pub fn new(topo: Topology, cfg: TransportConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        topo.validate()?;
        let rto = retry_timeout(cfg.timeout_exponent, cfg.retry_count);
        let delta = match cfg.delta_ns {
            Some(d) => SimTime(d),
            None => rto + SimTime(2 * topo.max_path_delay().as_nanos()),
        };
        let trace = Trace::with_level(cfg.trace_level);
        Ok(TransportEngine {
            cfg,
            queue: EventQueue::new(),
            fabric: Fabric::new(topo, trace),
            conns: Vec::new(),
            transfers: Vec::new(),
            tags: HashMap::new(),
            qp_owner: HashMap::new(),
            log: Vec::new(),
            pending: VecDeque::new(),
            delta,
            fatal: None,
        })
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn config(&self) -> &TransportConfig {
        &self.cfg
    }

    pub fn delta(&self) -> SimTime {
        self.delta
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn topology(&self) -> &Topology {
        self.fabric.topology()
    }

    pub fn trace(&self) -> &Trace {
        self.fabric.trace()
    }

    pub fn connection(&self, id: ConnId) -> &Connection {
        &self.conns[id.0]
    }

    pub fn connections(&self) -> &[Connection] {
        &self.conns
    }

    pub fn transfer(&self, id: TransferId) -> &Transfer {
        &self.transfers[id.0]
    }

    pub fn transfers(&self) -> &[Transfer] {
        &self.transfers
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn log_csv(&self) -> String {
        let mut out = String::from("time_ns,conn_id,role,event,chunk_index\n");
        for r in &self.log {
            let role = match r.role {
                Role::Sender => "sender",
                Role::Receiver => "receiver",
            };
            let chunk = r.chunk.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.time.as_nanos(),
                r.conn.0,
                role,
                r.event.name(),
                chunk
            ));
        }
        out
    }

    /// Connects `src` to `dst` with a primary QP on each GPU's closest NIC
    /// and, when configured, a backup QP on the second closest.
    pub fn open_connection(&mut self, src: GpuId, dst: GpuId) -> Result<ConnId, SimError> {
        let topo = self.fabric.topology();
        let src_host = topo.host_of_gpu(src)?;
        let dst_host = topo.host_of_gpu(dst)?;
        let mut pairs: Vec<(Endpoint, Endpoint, Option<NicPortId>, Option<NicPortId>)> = Vec::new();
        if src_host == dst_host {
            pairs.push((
                Endpoint {
                    host: src_host,
                    node: Node::Gpu(src),
                },
                Endpoint {
                    host: dst_host,
                    node: Node::Gpu(dst),
                },
                None,
                None,
            ));
        } else {
            let a = topo.nics_by_distance(src)?;
            let b = topo.nics_by_distance(dst)?;
            let n = self.cfg.qp_number.min(a.len()).min(b.len());
            for i in 0..n {
                pairs.push((
                    Endpoint {
                        host: src_host,
                        node: Node::Nic(a[i]),
                    },
                    Endpoint {
                        host: dst_host,
                        node: Node::Nic(b[i]),
                    },
                    Some(a[i]),
                    Some(b[i]),
                ));
            }
        }
        let id = ConnId(self.conns.len());
        let send_cq = self.fabric.create_cq(DEFAULT_CQ_CAPACITY);
        let recv_cq = self.fabric.create_cq(DEFAULT_CQ_CAPACITY);
        let mut made = Vec::new();
        for (i, (ea, eb, pa, pb)) in pairs.into_iter().enumerate() {
            let role = if i == 0 {
                QpRole::Primary
            } else {
                QpRole::Backup
            };
            let (qa, qb) =
                self.fabric
                    .connect(ea, eb, role, self.cfg.qp_config(), send_cq, recv_cq)?;
            self.qp_owner.insert(qa, id);
            self.qp_owner.insert(qb, id);
            made.push(QpPair {
                sender: qa,
                receiver: qb,
                src_port: pa,
                dst_port: pb,
            });
        }
        self.conns.push(Connection {
            id,
            src,
            dst,
            primary: made[0],
            backup: made.get(1).copied(),
            failed: false,
            switches: Vec::new(),
            messages: Vec::new(),
            sender_epoch: 0,
            sender_paused: false,
            send_queue: VecDeque::new(),
            receiver_epoch: 0,
            recv_queue: VecDeque::new(),
            timer: ReceiverTimer::new(self.delta),
            check: None,
            probe_wr: None,
            monitor_pending: false,
            dead_since: None,
            next_seq: 0,
        });
        Ok(id)
    }

    pub fn send_message(&mut self, conn: ConnId, length: u64) -> Result<TransferId, SimError> {
        self.send_message_with(conn, length, true)
    }

    /// Queues a message. With `sender_ready == false` the sender holds the
    /// data back until [`release_sender`](Self::release_sender), modelling
    /// an upstream stall while the receiver is already waiting.
    pub fn send_message_with(
        &mut self,
        conn: ConnId,
        length: u64,
        sender_ready: bool,
    ) -> Result<TransferId, SimError> {
        let c = self
            .conns
            .get(conn.0)
            .ok_or(SimError::UnknownConnection(conn.0))?;
        if c.failed {
            return Err(SimError::ConnectionFailed(conn.0));
        }
        if length == 0 {
            return Err(SimError::ZeroLengthMessage);
        }
        let chunk = self.cfg.chunk_size;
        let total = length.div_ceil(chunk);
        if total >= MAX_CHUNKS {
            return Err(SimError::TooManyChunks(total));
        }
        let id = TransferId(self.transfers.len());
        let src_owner = RegionOwner::Gpu(c.src);
        let dst_owner = RegionOwner::Gpu(c.dst);
        let seed = 0x5eed_0000_0000 ^ id.0 as u64;
        let src_region =
            self.fabric
                .register_region(src_owner, length, RegionKind::ApplicationBuffer, seed);
        let dst_region =
            self.fabric
                .register_region(dst_owner, length, RegionKind::ApplicationBuffer, 0);
        let c = &mut self.conns[conn.0];
        let seq = c.next_seq;
        c.next_seq += 1;
        c.send_queue.push_back(id);
        c.recv_queue.push_back(id);
        self.transfers.push(Transfer {
            id,
            conn,
            length,
            chunk_size: chunk,
            src_region,
            dst_region,
            sender: SenderProgress::new(total),
            receiver: ReceiverProgress::new(total),
            status: TransferStatus::InProgress,
            created_at: self.queue.now(),
            received_at: None,
            completed_at: None,
            delivery: Vec::new(),
            transmissions: Vec::new(),
            retransmitted: 0,
            seq,
            sender_ready,
            prep_busy: false,
            prepared: 0,
            copy_busy: false,
            copied: 0,
            slots_used: 0,
            copy_gen: 0,
            cts: BTreeSet::new(),
        });
        self.pump_receiver(conn);
        self.pump_sender(conn);
        self.drain_fabric();
        Ok(id)
    }

    pub fn release_sender(&mut self, transfer: TransferId) {
        let t = &mut self.transfers[transfer.0];
        if !t.sender_ready {
            t.sender_ready = true;
            let conn = t.conn;
            self.pump_sender(conn);
            self.drain_fabric();
        }
    }

    pub fn release_sender_at(&mut self, transfer: TransferId, at: SimTime) -> Result<(), SimError> {
        self.queue
            .schedule(Event::Release { transfer }, at)
            .map(|_| ())
    }

    /// Delivers `TransportEvent::Wake { token }` at `at`.
    pub fn schedule_wake(&mut self, at: SimTime, token: u64) -> Result<(), SimError> {
        self.queue.schedule(Event::Wake { token }, at).map(|_| ())
    }

    pub fn load_faults(&mut self, script: &FaultScript) -> Result<(), SimError> {
        script.validate(self.fabric.topology())?;
        for e in &script.entries {
            self.schedule_fault(e.at, e.port, e.state)?;
        }
        Ok(())
    }

    pub fn schedule_fault(
        &mut self,
        at: SimTime,
        port: NicPortId,
        state: PortState,
    ) -> Result<(), SimError> {
        self.fabric.topology().port_state(port)?;
        self.queue
            .schedule(Event::Fault { port, state }, at)
            .map(|_| ())
    }

    /// Competing traffic of `bytes` from `src` to `dst` starting at `at`.
    pub fn inject_background_flow(
        &mut self,
        at: SimTime,
        src: NicPortId,
        dst: NicPortId,
        bytes: u64,
    ) -> Result<(), SimError> {
        let path = self
            .fabric
            .topology()
            .path(Node::Nic(src), Node::Nic(dst))?;
        self.queue
            .schedule(
                Event::Background {
                    links: path.links,
                    bytes,
                },
                at,
            )
            .map(|_| ())
    }

    pub fn take_events(&mut self) -> Vec<TransportEvent> {
        self.pending.drain(..).collect()
    }

    /// Processes the next event at or before `limit`. Returns its time, or
    /// `None` when nothing is left before the limit.
    pub fn step(&mut self, limit: SimTime) -> Result<Option<SimTime>, SimError> {
        let Some((t, ev)) = self.queue.pop_until(limit) else {
            return Ok(None);
        };
        self.dispatch(ev)?;
        self.drain_fabric();
        if let Some(e) = self.fatal.clone().or_else(|| self.fabric.fatal().cloned()) {
            return Err(e);
        }
        Ok(Some(t))
    }

    /// Runs to `limit` or until no events remain; notifications accumulate
    /// for [`take_events`](Self::take_events).
    pub fn run_until(&mut self, limit: SimTime) -> Result<SimTime, SimError> {
        while self.step(limit)?.is_some() {}
        Ok(self.queue.now())
    }

    /// Like `run_until`, handing each notification to `f` as it happens.
    pub fn run_with<F>(&mut self, limit: SimTime, mut f: F) -> Result<SimTime, SimError>
    where
        F: FnMut(&mut Self, TransportEvent) -> Result<(), SimError>,
    {
        loop {
            while let Some(ev) = self.pending.pop_front() {
                f(self, ev)?;
            }
            if self.step(limit)?.is_none() {
                break;
            }
        }
        while let Some(ev) = self.pending.pop_front() {
            f(self, ev)?;
        }
        Ok(self.queue.now())
    }

    /// Compares what landed at the receiver with the sender's buffer.
    pub fn verify(&self, id: TransferId) -> Integrity {
        let t = &self.transfers[id.0];
        let src = self.fabric.region(t.src_region);
        let dst = self.fabric.region(t.dst_region);
        let expect = src.source_checksum(t.length, t.chunk_size);
        let exactly = t.delivery.len() as u64 == t.total_chunks()
            && t.delivery.iter().enumerate().all(|(i, &c)| i as u64 == c);
        Integrity {
            checksum_match: dst.received_checksum() == expect && dst.written_bytes() == t.length,
            exactly_once_in_order: exactly,
            bytes_written: dst.written_bytes(),
        }
    }

    pub(crate) fn note(&mut self, conn: ConnId, role: Role, event: LogEvent, chunk: Option<u64>) {
        if event.per_chunk() && !self.cfg.chunk_log {
            return;
        }
        self.log.push(LogRecord {
            time: self.queue.now(),
            conn,
            role,
            event,
            chunk,
        });
    }

    fn dispatch(&mut self, ev: Event) -> Result<(), SimError> {
        match ev {
            Event::Fabric(f) => self.fabric.handle(&mut self.queue, f),
            Event::Fault { port, state } => {
                self.fabric.apply_fault(&mut self.queue, port, state)?
            }
            Event::Background { links, bytes } => {
                self.fabric
                    .start_background_flow(&mut self.queue, links, bytes);
            }
            Event::Prepared { transfer } => self.on_prepared(transfer),
            Event::Copied {
                transfer,
                generation,
            } => self.on_copied(transfer, generation),
            Event::ReceiverCheck { conn } => self.on_receiver_check(conn),
            Event::ProbePrimary { conn } => self.on_probe_primary(conn),
            Event::Release { transfer } => self.release_sender(transfer),
            Event::Wake { token } => self.pending.push_back(TransportEvent::Wake {
                token,
                at: self.queue.now(),
            }),
        }
        Ok(())
    }

    pub(crate) fn drain_fabric(&mut self) {
        loop {
            let outs = self.fabric.take_outputs();
            if outs.is_empty() {
                break;
            }
            for o in outs {
                match o {
                    FabricOutput::CqUpdated(cq) => {
                        let n = self.fabric.cq(cq).len();
                        if n > 0 {
                            for wc in self.fabric.poll_cq(cq, n) {
                                self.on_wc(wc);
                            }
                        }
                    }
                    FabricOutput::Inbound { qp, imm } => self.on_inbound(qp, imm),
                    FabricOutput::PortChanged { .. } => {}
                }
            }
        }
    }
}
