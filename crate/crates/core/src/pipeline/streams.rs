//! In-order streams synchronized by events and host-function barriers.

use std::collections::BTreeMap;

use serde::Serialize;

use super::PipelineError;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EventId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Compute,
    Communication,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Gemm,
    P2PSend,
    P2PRecv,
    EventRecord,
    EventWait,
    HostFuncWait,
    HostFuncBarrier,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Gemm => "gemm",
            OpKind::P2PSend => "p2p_send",
            OpKind::P2PRecv => "p2p_recv",
            OpKind::EventRecord => "event_record",
            OpKind::EventWait => "event_wait",
            OpKind::HostFuncWait => "host_func_wait",
            OpKind::HostFuncBarrier => "host_func_barrier",
        }
    }

    fn waits(self) -> bool {
        matches!(
            self,
            OpKind::EventWait | OpKind::HostFuncWait | OpKind::HostFuncBarrier
        )
    }

    fn is_p2p(self) -> bool {
        matches!(self, OpKind::P2PSend | OpKind::P2PRecv)
    }
}

/// One queued op.
///
/// A P2P op without an event is a kernel that holds its stream for
/// `duration`. With an event it is handed off: the stream moves on at once
/// and the event is recorded when the transfer finishes. Wait-type ops
/// start no earlier than their event and then hold the stream for
/// `duration` (host-function dispatch cost).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StreamOp {
    pub kind: OpKind,
    pub duration: SimTime,
    pub event: Option<EventId>,
    pub microbatch: Option<u32>,
    /// Free-form tag carried into the trace.
    pub label: &'static str,
}

impl StreamOp {
    fn new(kind: OpKind, duration: SimTime, event: Option<EventId>) -> Self {
        StreamOp {
            kind,
            duration,
            event,
            microbatch: None,
            label: "",
        }
    }

    pub fn gemm(duration: SimTime) -> Self {
        Self::new(OpKind::Gemm, duration, None)
    }

    pub fn send(duration: SimTime) -> Self {
        Self::new(OpKind::P2PSend, duration, None)
    }

    pub fn send_offloaded(duration: SimTime, done: EventId) -> Self {
        Self::new(OpKind::P2PSend, duration, Some(done))
    }

    pub fn recv(duration: SimTime) -> Self {
        Self::new(OpKind::P2PRecv, duration, None)
    }

    pub fn record(e: EventId) -> Self {
        Self::new(OpKind::EventRecord, SimTime::ZERO, Some(e))
    }

    pub fn wait(e: EventId) -> Self {
        Self::new(OpKind::EventWait, SimTime::ZERO, Some(e))
    }

    pub fn host_wait(e: EventId, overhead: SimTime) -> Self {
        Self::new(OpKind::HostFuncWait, overhead, Some(e))
    }

    pub fn barrier(transfer_done: EventId, overhead: SimTime) -> Self {
        Self::new(OpKind::HostFuncBarrier, overhead, Some(transfer_done))
    }

    pub fn mb(mut self, i: u32) -> Self {
        self.microbatch = Some(i);
        self
    }

    pub fn label(mut self, l: &'static str) -> Self {
        self.label = l;
        self
    }

    fn offloaded(&self) -> bool {
        self.kind.is_p2p() && self.event.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stream {
    pub id: usize,
    pub kind: StreamKind,
    pub ops: Vec<StreamOp>,
}

impl Stream {
    pub fn new(id: usize, kind: StreamKind) -> Self {
        Stream {
            id,
            kind,
            ops: Vec::new(),
        }
    }

    pub fn push(&mut self, op: StreamOp) -> &mut Self {
        self.ops.push(op);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    /// Index into the input stream list.
    pub stream: usize,
    pub index: usize,
    pub kind: OpKind,
    pub label: &'static str,
    pub microbatch: Option<u32>,
    /// Activity span; a handed-off transfer's span is the transfer itself.
    pub start: SimTime,
    pub end: SimTime,
    /// When the stream may start its next op.
    pub release: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExecutionTrace {
    pub entries: Vec<TraceEntry>,
    pub events: BTreeMap<EventId, SimTime>,
}

impl ExecutionTrace {
    pub fn makespan(&self) -> SimTime {
        self.entries
            .iter()
            .map(|e| e.end.max(e.release))
            .max()
            .unwrap_or(SimTime::ZERO)
    }

    /// Re-checks event waits, barriers and per-stream FIFO order.
    pub fn verify(&self, streams: &[Stream]) -> Result<(), PipelineError> {
        let mut by_stream: Vec<Vec<&TraceEntry>> = vec![Vec::new(); streams.len()];
        for e in &self.entries {
            by_stream[e.stream].push(e);
        }
        for (s, entries) in by_stream.iter_mut().enumerate() {
            entries.sort_by_key(|e| e.index);
            if entries.len() != streams[s].ops.len() {
                return Err(PipelineError::OrderViolation(format!(
                    "stream {s} ran {} of {} ops",
                    entries.len(),
                    streams[s].ops.len()
                )));
            }
            let mut free = SimTime::ZERO;
            let mut fence = SimTime::ZERO;
            for e in entries.iter() {
                let op = &streams[s].ops[e.index];
                if e.start < free || e.start < fence {
                    return Err(PipelineError::OrderViolation(format!(
                        "stream {s} op {} starts early",
                        e.index
                    )));
                }
                if op.kind.waits() {
                    let t = op
                        .event
                        .and_then(|ev| self.events.get(&ev))
                        .ok_or_else(|| {
                            PipelineError::OrderViolation(format!(
                                "stream {s} op {} waits on an unrecorded event",
                                e.index
                            ))
                        })?;
                    if e.start < *t {
                        return Err(PipelineError::OrderViolation(format!(
                            "stream {s} op {} starts before its event",
                            e.index
                        )));
                    }
                    if op.kind == OpKind::HostFuncBarrier {
                        fence = fence.max(*t);
                    }
                }
                free = e.release;
            }
        }
        Ok(())
    }
}

/// Times every op: each stream runs its queue in order, wait-type ops hold
/// until their event has been recorded.
pub fn enforce_order(streams: &[Stream]) -> Result<ExecutionTrace, PipelineError> {
    let mut head = vec![0usize; streams.len()];
    let mut free = vec![SimTime::ZERO; streams.len()];
    let mut trace = ExecutionTrace::default();
    loop {
        let mut progress = false;
        for (s, st) in streams.iter().enumerate() {
            while let Some(op) = st.ops.get(head[s]) {
                let mut start = free[s];
                if op.kind.waits() {
                    let ev = op.event.ok_or_else(|| {
                        PipelineError::InvalidConfig(format!(
                            "stream {s} op {} waits on nothing",
                            head[s]
                        ))
                    })?;
                    match trace.events.get(&ev) {
                        Some(&t) => start = start.max(t),
                        None => break,
                    }
                }
                let end = start + op.duration;
                let release = if op.offloaded() { start } else { end };
                if op.kind == OpKind::EventRecord || op.offloaded() {
                    let ev = op.event.ok_or_else(|| {
                        PipelineError::InvalidConfig(format!(
                            "stream {s} op {} records nothing",
                            head[s]
                        ))
                    })?;
                    let at = if op.offloaded() { end } else { start };
                    if trace.events.insert(ev, at).is_some() {
                        return Err(PipelineError::InvalidConfig(format!(
                            "event {} recorded twice",
                            ev.0
                        )));
                    }
                }
                trace.entries.push(TraceEntry {
                    stream: s,
                    index: head[s],
                    kind: op.kind,
                    label: op.label,
                    microbatch: op.microbatch,
                    start,
                    end,
                    release,
                });
                free[s] = release;
                head[s] += 1;
                progress = true;
            }
        }
        if !progress {
            break;
        }
    }
    let stuck: Vec<String> = streams
        .iter()
        .enumerate()
        .filter_map(|(s, st)| {
            st.ops.get(head[s]).map(|op| {
                format!(
                    "stream {s} op {} waits on event {}",
                    head[s],
                    op.event.map_or(0, |e| e.0)
                )
            })
        })
        .collect();
    if !stuck.is_empty() {
        return Err(PipelineError::DependencyCycle(stuck.join("; ")));
    }
    trace.entries.sort_by_key(|e| (e.start, e.stream, e.index));
    Ok(trace)
}
