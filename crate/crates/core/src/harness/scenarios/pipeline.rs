use serde::Serialize;

use crate::harness::{HarnessError, Outcome, OutputFile, RunStatus, RunSummary, ScenarioParams};
use crate::pipeline::{
    run_1f1b, training_throughput_proxy, P2pMode, PipelineConfig, TimelineEntry,
};
use crate::time::SimTime;

const MS: u64 = 1_000_000;
pub const P2P_RATIOS: [f64; 3] = [0.1, 0.25, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub p2p_ratio: f64,
    pub p2p_ns: u64,
    pub offloaded_ns: u64,
    pub kernel_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub workers: u32,
    pub microbatches: u32,
    pub sweep: Vec<SweepPoint>,
    pub offloaded_always_faster: bool,
    pub oracle_offloaded_match: bool,
    pub oracle_kernel_match: bool,
    /// Default config with P2P timed on the transport.
    pub transport_p2p_offloaded_ns: u64,
    pub transport_p2p_kernel_ns: u64,
    pub throughput_ratio: f64,
}

/// 1 ms passes, 0.5 ms transfers.
pub fn oracle_config(mode: P2pMode) -> PipelineConfig {
    PipelineConfig {
        workers: 2,
        microbatches: 2,
        fwd_ns: MS,
        bwd_ns: MS,
        p2p_ns: Some(MS / 2),
        p2p_sm_fraction: 0.0,
        p2p_mode: mode,
        ..PipelineConfig::default()
    }
}

/// Worked by hand for `oracle_config`, in half-millisecond ticks.
pub fn hand_oracle(mode: P2pMode) -> Vec<TimelineEntry> {
    let rows: [(u32, &'static str, u32, u64, u64); 12] = match mode {
        P2pMode::Offloaded => [
            (0, "forward", 0, 0, 2),
            (0, "p2p_act", 0, 2, 3),
            (0, "forward", 1, 2, 4),
            (0, "p2p_act", 1, 4, 5),
            (0, "backward", 0, 8, 10),
            (0, "backward", 1, 12, 14),
            (1, "forward", 0, 3, 5),
            (1, "backward", 0, 5, 7),
            (1, "p2p_grad", 0, 7, 8),
            (1, "forward", 1, 7, 9),
            (1, "backward", 1, 9, 11),
            (1, "p2p_grad", 1, 11, 12),
        ],
        P2pMode::KernelBased => [
            (0, "forward", 0, 0, 2),
            (0, "p2p_act", 0, 2, 3),
            (0, "forward", 1, 3, 5),
            (0, "p2p_act", 1, 5, 6),
            (0, "backward", 0, 8, 10),
            (0, "backward", 1, 13, 15),
            (1, "forward", 0, 3, 5),
            (1, "backward", 0, 5, 7),
            (1, "p2p_grad", 0, 7, 8),
            (1, "forward", 1, 8, 10),
            (1, "backward", 1, 10, 12),
            (1, "p2p_grad", 1, 12, 13),
        ],
    };
    let tick = MS / 2;
    let mut v: Vec<TimelineEntry> = rows
        .iter()
        .map(|&(worker, op_kind, microbatch, s, e)| TimelineEntry {
            worker,
            op_kind,
            microbatch,
            start: SimTime(s * tick),
            end: SimTime(e * tick),
        })
        .collect();
    sort(&mut v);
    v
}

fn sort(v: &mut [TimelineEntry]) {
    v.sort_by_key(|e| (e.worker, e.start, e.op_kind, e.microbatch));
}

/// Simulated timeline of the oracle case, in oracle order.
pub fn oracle_timeline(mode: P2pMode) -> Result<Vec<TimelineEntry>, HarnessError> {
    let mut v = run_1f1b(&oracle_config(mode))?.timeline;
    sort(&mut v);
    Ok(v)
}

struct Measured {
    report: PipelineReport,
    files: Vec<OutputFile>,
}

fn measure() -> Result<Measured, HarnessError> {
    let base = PipelineConfig {
        fwd_ns: 10 * MS,
        bwd_ns: 10 * MS,
        p2p_sm_fraction: 0.0,
        ..PipelineConfig::default()
    };
    let mut sweep = Vec::new();
    let mut csv = String::from("p2p_ratio,p2p_ns,offloaded_ns,kernel_ns\n");
    let mut files = Vec::new();
    for r in P2P_RATIOS {
        let p2p_ns = (r * base.fwd_ns as f64).round() as u64;
        let cfg = PipelineConfig {
            p2p_ns: Some(p2p_ns),
            ..base.clone()
        };
        let off = run_1f1b(&cfg.with_mode(P2pMode::Offloaded))?;
        let ker = run_1f1b(&cfg.with_mode(P2pMode::KernelBased))?;
        csv.push_str(&format!(
            "{r},{p2p_ns},{},{}\n",
            off.makespan.0, ker.makespan.0
        ));
        if r == 0.25 {
            files.push(OutputFile::new(
                "timeline_offloaded.csv",
                off.timeline_csv(),
            ));
            files.push(OutputFile::new("timeline_kernel.csv", ker.timeline_csv()));
        }
        sweep.push(SweepPoint {
            p2p_ratio: r,
            p2p_ns,
            offloaded_ns: off.makespan.0,
            kernel_ns: ker.makespan.0,
        });
    }
    files.insert(0, OutputFile::new("sweep.csv", csv));
    let def = PipelineConfig::default();
    let off = run_1f1b(&def.with_mode(P2pMode::Offloaded))?;
    let ker = run_1f1b(&def.with_mode(P2pMode::KernelBased))?;
    let report = PipelineReport {
        workers: base.workers,
        microbatches: base.microbatches,
        offloaded_always_faster: sweep.iter().all(|p| p.offloaded_ns < p.kernel_ns),
        sweep,
        oracle_offloaded_match: oracle_timeline(P2pMode::Offloaded)?
            == hand_oracle(P2pMode::Offloaded),
        oracle_kernel_match: oracle_timeline(P2pMode::KernelBased)?
            == hand_oracle(P2pMode::KernelBased),
        transport_p2p_offloaded_ns: off.p2p_time.0,
        transport_p2p_kernel_ns: ker.p2p_time.0,
        throughput_ratio: training_throughput_proxy(&off, 1.0)
            / training_throughput_proxy(&ker, 1.0),
    };
    Ok(Measured { report, files })
}

pub fn pipeline_1f1b(_params: &ScenarioParams) -> Result<PipelineReport, HarnessError> {
    Ok(measure()?.report)
}

pub(super) fn run(params: &ScenarioParams) -> Result<Outcome, HarnessError> {
    let m = measure()?;
    let r = &m.report;
    let mut summary = RunSummary::new("pipeline-1f1b", params.seed);
    summary.makespan_ns = r.sweep.iter().map(|p| p.kernel_ns).max();
    if !(r.offloaded_always_faster && r.oracle_offloaded_match && r.oracle_kernel_match) {
        summary.status = RunStatus::Aborted {
            reason: "pipeline checks failed".into(),
        };
    }
    summary.metrics = serde_json::to_value(r).expect("plain data");
    Ok(Outcome {
        summary,
        files: m.files,
    })
}
