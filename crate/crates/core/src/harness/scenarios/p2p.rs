use serde::Serialize;

use crate::harness::{HarnessError, Outcome, OutputFile, RunStatus, RunSummary, ScenarioParams};
use crate::netsim::{ClosConfig, HostId, Topology};
use crate::time::SimTime;
use crate::transport::{StageCosts, TransportConfig, TransportEngine};

const GIB: u64 = 1 << 30;
const NIC_GBPS: f64 = 400.0;
const COPY_SHARE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub bytes: u64,
    pub zero_copy_gbps: f64,
    pub staged_gbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct P2pModesReport {
    pub message_bytes: u64,
    /// Share of the staged chunk cycle spent in the buffer copy.
    pub copy_share: f64,
    pub zero_copy_ns: u64,
    pub staged_ns: u64,
    pub zero_copy_gbps: f64,
    pub staged_gbps: f64,
    /// Zero-copy throughput over staged, minus one.
    pub gain: f64,
    pub integrity: bool,
    pub sweep: Vec<SweepRow>,
}

struct Shot {
    duration: SimTime,
    ok: bool,
    log: String,
}

fn shot(
    stage_costs: StageCosts,
    bytes: u64,
    params: &ScenarioParams,
) -> Result<Shot, HarnessError> {
    let topo = Topology::clos(&ClosConfig {
        hosts: 2,
        gpus_per_host: 1,
        nics_per_host: 1,
        leaves: 1,
        spines: 0,
        nic_gbps: NIC_GBPS,
        ..ClosConfig::default()
    })?;
    let mut cfg = TransportConfig {
        stage_costs,
        record_messages: false,
        ..TransportConfig::default()
    };
    params.overrides.apply(&mut cfg);
    let (a, b) = (topo.gpu(HostId(0), 0), topo.gpu(HostId(1), 0));
    let mut eng = TransportEngine::new(topo, cfg)?;
    let conn = eng.open_connection(a, b)?;
    let t = eng.send_message(conn, bytes)?;
    eng.run_until(SimTime::from_secs(60))?;
    let duration = eng
        .transfer(t)
        .duration()
        .ok_or_else(|| HarnessError::Scenario("transfer did not finish".into()))?;
    Ok(Shot {
        duration,
        ok: eng.verify(t).ok(),
        log: eng.log_csv(),
    })
}

fn gbps(bytes: u64, d: SimTime) -> f64 {
    bytes as f64 * 8.0 / d.as_secs_f64() / 1e9
}

pub fn p2p_modes(params: &ScenarioParams) -> Result<P2pModesReport, HarnessError> {
    Ok(measure(params)?.0)
}

fn measure(params: &ScenarioParams) -> Result<(P2pModesReport, String), HarnessError> {
    let staged = StageCosts::staged_calibrated(COPY_SHARE, NIC_GBPS * 1e9);
    let zero = StageCosts::zero_copy();
    let z = shot(zero.clone(), GIB, params)?;
    let s = shot(staged.clone(), GIB, params)?;
    let mut sweep = Vec::new();
    for bytes in [1 << 20, 16 << 20, 256 << 20] {
        let (a, b) = (
            shot(zero.clone(), bytes, params)?,
            shot(staged.clone(), bytes, params)?,
        );
        sweep.push(SweepRow {
            bytes,
            zero_copy_gbps: gbps(bytes, a.duration),
            staged_gbps: gbps(bytes, b.duration),
        });
    }
    let (zg, sg) = (gbps(GIB, z.duration), gbps(GIB, s.duration));
    sweep.push(SweepRow {
        bytes: GIB,
        zero_copy_gbps: zg,
        staged_gbps: sg,
    });
    let report = P2pModesReport {
        message_bytes: GIB,
        copy_share: COPY_SHARE,
        zero_copy_ns: z.duration.0,
        staged_ns: s.duration.0,
        zero_copy_gbps: zg,
        staged_gbps: sg,
        gain: zg / sg - 1.0,
        integrity: z.ok && s.ok,
        sweep,
    };
    Ok((report, z.log))
}

pub(super) fn run(params: &ScenarioParams) -> Result<Outcome, HarnessError> {
    let (r, log) = measure(params)?;
    let mut summary = RunSummary::new("p2p-modes", params.seed);
    summary.makespan_ns = Some(r.zero_copy_ns + r.staged_ns);
    summary.integrity = Some(r.integrity);
    if !r.integrity {
        summary.status = RunStatus::Aborted {
            reason: "integrity check failed".into(),
        };
    }
    summary.metrics = serde_json::to_value(&r).expect("plain data");
    let mut csv = String::from("bytes,zero_copy_gbps,staged_gbps\n");
    for row in &r.sweep {
        csv.push_str(&format!(
            "{},{:.6},{:.6}\n",
            row.bytes, row.zero_copy_gbps, row.staged_gbps
        ));
    }
    Ok(Outcome {
        summary,
        files: vec![
            OutputFile::new("sweep.csv", csv),
            OutputFile::new("zero_copy_log.csv", log),
        ],
    })
}
