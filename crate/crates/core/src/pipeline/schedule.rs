//! 1F1B pipeline schedule over compute and communication streams.

use serde::{Deserialize, Serialize};

use super::sm::{gemm_duration, SmPool, SM_FRACTION_INTER_HOST};
use super::streams::{
    enforce_order, EventId, ExecutionTrace, OpKind, Stream, StreamKind, StreamOp,
};
use super::PipelineError;
use crate::netsim::{ClosConfig, HostId, Topology};
use crate::time::SimTime;
use crate::transport::{StageCosts, TransportConfig, TransportEngine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum P2pMode {
    /// P2P runs as a GPU kernel on the compute stream.
    KernelBased,
    /// P2P is handed to a CPU proxy; the compute stream never blocks on it.
    Offloaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub workers: u32,
    pub microbatches: u32,
    pub fwd_ns: u64,
    pub bwd_ns: u64,
    pub p2p_bytes: u64,
    pub p2p_mode: P2pMode,
    /// Only used in KernelBased mode.
    pub p2p_sm_fraction: f64,
    /// Fixed P2P time. When unset it is measured on the transport.
    pub p2p_ns: Option<u64>,
    pub host_func_ns: u64,
    pub nic_gbps: f64,
    /// Share of the staged pipeline spent copying (KernelBased transfers).
    pub copy_fraction: f64,
    pub total_sm: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            workers: 4,
            microbatches: 8,
            fwd_ns: 10_000_000,
            bwd_ns: 20_000_000,
            p2p_bytes: 64 << 20,
            p2p_mode: P2pMode::Offloaded,
            p2p_sm_fraction: SM_FRACTION_INTER_HOST,
            p2p_ns: None,
            host_func_ns: 0,
            nic_gbps: 400.0,
            copy_fraction: 0.25,
            total_sm: 132,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.workers < 1 {
            return bad("workers must be at least 1");
        }
        if self.microbatches < 1 {
            return bad("microbatches must be at least 1");
        }
        if self.fwd_ns == 0 || self.bwd_ns == 0 {
            return bad("forward and backward times must be positive");
        }
        if !(0.0..1.0).contains(&self.p2p_sm_fraction) {
            return bad("p2p_sm_fraction must be in [0, 1)");
        }
        if self.p2p_ns.is_none() && self.p2p_bytes > 0 && !(self.nic_gbps > 0.0) {
            return bad("nic_gbps must be positive");
        }
        if !(0.0..1.0).contains(&self.copy_fraction) {
            return bad("copy_fraction must be in [0, 1)");
        }
        Ok(())
    }

    pub fn with_mode(&self, mode: P2pMode) -> Self {
        PipelineConfig {
            p2p_mode: mode,
            ..self.clone()
        }
    }
}

/// Forward/backward order of one worker: `workers - worker - 1` warmup
/// forwards, alternating steady state, remaining backwards.
pub fn one_f_one_b_order(worker: u32, workers: u32, microbatches: u32) -> Vec<(Phase, u32)> {
    let warm = (workers - worker - 1).min(microbatches);
    let mut v: Vec<(Phase, u32)> = (0..warm).map(|i| (Phase::Forward, i)).collect();
    let (mut f, mut b) = (warm, 0);
    while f < microbatches {
        v.push((Phase::Forward, f));
        v.push((Phase::Backward, b));
        f += 1;
        b += 1;
    }
    v.extend((b..microbatches).map(|i| (Phase::Backward, i)));
    v
}

/// Time to move `bytes` between two hosts: zero-copy for offloaded,
/// staged copy for kernel-based.
pub fn p2p_duration(
    bytes: u64,
    mode: P2pMode,
    nic_gbps: f64,
    copy_fraction: f64,
) -> Result<SimTime, PipelineError> {
    if bytes == 0 {
        return Ok(SimTime::ZERO);
    }
    let topo = Topology::clos(&ClosConfig {
        hosts: 2,
        gpus_per_host: 1,
        nics_per_host: 1,
        leaves: 1,
        spines: 0,
        nic_gbps,
        ..ClosConfig::default()
    })?;
    let stage_costs = match mode {
        P2pMode::Offloaded => StageCosts::zero_copy(),
        P2pMode::KernelBased => StageCosts::staged_calibrated(copy_fraction, nic_gbps * 1e9),
    };
    let (a, b) = (topo.gpu(HostId(0), 0), topo.gpu(HostId(1), 0));
    let mut eng = TransportEngine::new(
        topo,
        TransportConfig {
            qp_number: 1,
            stage_costs,
            chunk_log: false,
            record_messages: false,
            ..TransportConfig::default()
        },
    )?;
    let conn = eng.open_connection(a, b)?;
    let t = eng.send_message(conn, bytes)?;
    eng.run_until(SimTime::MAX)?;
    eng.transfer(t)
        .duration()
        .ok_or_else(|| PipelineError::InvalidConfig("probe transfer did not finish".into()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TimelineEntry {
    pub worker: u32,
    /// `forward`, `backward`, `p2p_act` or `p2p_grad`.
    pub op_kind: &'static str,
    pub microbatch: u32,
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineResult {
    pub mode: P2pMode,
    pub workers: u32,
    pub microbatches: u32,
    pub p2p_time: SimTime,
    pub makespan: SimTime,
    pub timeline: Vec<TimelineEntry>,
    /// Makespan minus compute time, per worker.
    pub worker_idle: Vec<SimTime>,
    pub critical_worker: u32,
    pub bubble: SimTime,
    /// Peak forwards whose backward has not run, per worker.
    pub max_in_flight: Vec<u32>,
    /// SM-seconds held by P2P kernels across all workers.
    pub p2p_sm_seconds: f64,
    #[serde(skip)]
    pub streams: Vec<Stream>,
    #[serde(skip)]
    pub trace: ExecutionTrace,
}

impl PipelineResult {
    pub fn timeline_csv(&self) -> String {
        let mut s = String::from("worker,op_kind,microbatch,start_ns,end_ns\n");
        for e in &self.timeline {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.worker, e.op_kind, e.microbatch, e.start.0, e.end.0
            ));
        }
        s
    }

    /// Sorted `(worker, op_kind, microbatch)` of every data-carrying op.
    pub fn data_ops(&self) -> Vec<(u32, &'static str, u32)> {
        let mut v: Vec<_> = self
            .timeline
            .iter()
            .map(|e| (e.worker, e.op_kind, e.microbatch))
            .collect();
        v.sort();
        v
    }

    /// Checks the data dependencies of the pipeline against the timeline.
    pub fn check_dependencies(&self) -> Result<(), PipelineError> {
        use std::collections::BTreeMap;
        let span: BTreeMap<(u32, &str, u32), (SimTime, SimTime)> = self
            .timeline
            .iter()
            .map(|e| ((e.worker, e.op_kind, e.microbatch), (e.start, e.end)))
            .collect();
        let get = |w, k, i| span.get(&(w, k, i)).copied();
        let last = self.workers - 1;
        for i in 0..self.microbatches {
            for w in 0..self.workers {
                // (before, after) pairs
                let mut need = vec![((w, "forward"), (w, "backward"))];
                if w > 0 {
                    need.push(((w - 1, "p2p_act"), (w, "forward")));
                    need.push(((w, "backward"), (w, "p2p_grad")));
                }
                if w < last {
                    need.push(((w, "forward"), (w, "p2p_act")));
                    need.push(((w + 1, "p2p_grad"), (w, "backward")));
                }
                for ((dw, dk), (ow, ok)) in need {
                    let (Some(dep), Some(op)) = (get(dw, dk, i), get(ow, ok, i)) else {
                        return Err(PipelineError::OrderViolation(format!(
                            "missing {dk} or {ok} for mb {i}"
                        )));
                    };
                    if op.0 < dep.1 {
                        return Err(PipelineError::OrderViolation(format!(
                            "{ok} mb {i} on worker {ow} starts before {dk} on worker {dw} ends"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

struct Ev {
    workers: usize,
    micro: usize,
}

impl Ev {
    // act/grad arrival at a worker, and compute-done marks for the proxy
    fn id(&self, kind: usize, w: u32, i: u32) -> EventId {
        EventId((kind * self.workers + w as usize) * self.micro + i as usize)
    }
}

const ACT: usize = 0;
const GRAD: usize = 1;
const FWD_DONE: usize = 2;
const BWD_DONE: usize = 3;

/// Builds both streams of every worker and times them.
pub fn run_1f1b(cfg: &PipelineConfig) -> Result<PipelineResult, PipelineError> {
    cfg.validate()?;
    let (w_n, m) = (cfg.workers, cfg.microbatches);
    let p2p = match cfg.p2p_ns {
        Some(ns) => SimTime(ns),
        None if w_n > 1 => {
            p2p_duration(cfg.p2p_bytes, cfg.p2p_mode, cfg.nic_gbps, cfg.copy_fraction)?
        }
        None => SimTime::ZERO,
    };
    // P2P kernels never overlap a GEMM on their worker, so GEMMs see the
    // whole pool.
    let pool = SmPool::new(cfg.total_sm);
    let fwd = gemm_duration(SimTime(cfg.fwd_ns), &pool)?;
    let bwd = gemm_duration(SimTime(cfg.bwd_ns), &pool)?;
    let h = SimTime(cfg.host_func_ns);
    let ev = Ev {
        workers: w_n as usize,
        micro: m as usize,
    };

    let mut streams = Vec::with_capacity(2 * w_n as usize);
    for w in 0..w_n {
        let mut c = Stream::new(2 * w as usize, StreamKind::Compute);
        let mut x = Stream::new(2 * w as usize + 1, StreamKind::Communication);
        for (phase, i) in one_f_one_b_order(w, w_n, m) {
            let (input, dur, label, peer, arrive, done, p2p_label) = match phase {
                Phase::Forward => (
                    (w > 0).then(|| ev.id(ACT, w, i)),
                    fwd,
                    "forward",
                    (w + 1 < w_n).then(|| w + 1),
                    ACT,
                    FWD_DONE,
                    "p2p_act",
                ),
                Phase::Backward => (
                    (w + 1 < w_n).then(|| ev.id(GRAD, w, i)),
                    bwd,
                    "backward",
                    w.checked_sub(1),
                    GRAD,
                    BWD_DONE,
                    "p2p_grad",
                ),
            };
            if let Some(e) = input {
                c.push(StreamOp::wait(e).mb(i));
            }
            c.push(StreamOp::gemm(dur).mb(i).label(label));
            let Some(peer) = peer else { continue };
            let arrived = ev.id(arrive, peer, i);
            match cfg.p2p_mode {
                P2pMode::KernelBased => {
                    c.push(StreamOp::send(p2p).mb(i).label(p2p_label));
                    c.push(StreamOp::record(arrived).mb(i));
                }
                P2pMode::Offloaded => {
                    let mark = ev.id(done, w, i);
                    c.push(StreamOp::record(mark).mb(i));
                    x.push(StreamOp::host_wait(mark, h).mb(i));
                    x.push(
                        StreamOp::send_offloaded(p2p, arrived)
                            .mb(i)
                            .label(p2p_label),
                    );
                    x.push(StreamOp::barrier(arrived, h).mb(i));
                }
            }
        }
        streams.push(c);
        streams.push(x);
    }

    let trace = enforce_order(&streams)?;
    trace.verify(&streams)?;
    let makespan = trace.makespan();
    let mut timeline: Vec<TimelineEntry> = trace
        .entries
        .iter()
        .filter(|e| matches!(e.kind, OpKind::Gemm | OpKind::P2PSend))
        .map(|e| TimelineEntry {
            worker: (e.stream / 2) as u32,
            op_kind: e.label,
            microbatch: e.microbatch.unwrap_or(0),
            start: e.start,
            end: e.end,
        })
        .collect();
    timeline.sort_by_key(|e| (e.worker, e.start, e.op_kind));

    let mut worker_idle = Vec::with_capacity(w_n as usize);
    let mut max_in_flight = Vec::with_capacity(w_n as usize);
    let mut last_end = Vec::with_capacity(w_n as usize);
    for w in 0..w_n {
        let mine: Vec<&TimelineEntry> = timeline.iter().filter(|e| e.worker == w).collect();
        let compute: u64 = mine
            .iter()
            .filter(|e| !e.op_kind.starts_with("p2p"))
            .map(|e| (e.end - e.start).0)
            .sum();
        worker_idle.push(SimTime(makespan.0 - compute));
        let mut live = 0i64;
        let mut peak = 0i64;
        for e in &mine {
            match e.op_kind {
                "forward" => live += 1,
                "backward" => live -= 1,
                _ => {}
            }
            peak = peak.max(live);
        }
        max_in_flight.push(peak as u32);
        last_end.push(mine.iter().map(|e| e.end).max().unwrap_or(SimTime::ZERO));
    }
    let critical_worker = (0..w_n)
        .max_by_key(|&w| (last_end[w as usize], std::cmp::Reverse(w)))
        .unwrap_or(0);
    let sends = timeline
        .iter()
        .filter(|e| e.op_kind.starts_with("p2p"))
        .count() as f64;
    let p2p_sm_seconds = match cfg.p2p_mode {
        P2pMode::KernelBased => sends * p2p.as_secs_f64() * cfg.p2p_sm_fraction,
        P2pMode::Offloaded => 0.0,
    };
    Ok(PipelineResult {
        mode: cfg.p2p_mode,
        workers: w_n,
        microbatches: m,
        p2p_time: p2p,
        makespan,
        bubble: worker_idle[critical_worker as usize],
        worker_idle,
        critical_worker,
        max_in_flight,
        p2p_sm_seconds,
        timeline,
        streams,
        trace,
    })
}

/// Work per second over the whole schedule.
pub fn training_throughput_proxy(result: &PipelineResult, work_per_microbatch: f64) -> f64 {
    result.microbatches as f64 * work_per_microbatch / result.makespan.as_secs_f64()
}
