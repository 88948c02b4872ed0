use serde::Serialize;

use crate::collectives::{CollectiveOp, CollectiveStatus, CommGroup, Communicator, RingMode};
use crate::harness::config::bin_for;
use crate::harness::phases::{binned_throughput, phase_throughput, throughput_csv};
use crate::harness::{
    HarnessError, Outcome, OutputFile, PhaseThroughput, RunStatus, RunSummary, ScenarioParams,
};
use crate::netsim::{ClosConfig, FaultScript, HostId, Node, Topology};
use crate::time::SimTime;
use crate::transport::{MessageRecord, TransportConfig, TransportEngine};
use crate::verbs::{retry_timeout, QpRole};

const NIC_GBPS: f64 = 100.0;
const DOWN_S: u64 = 4;
const UP_S: u64 = 19;
/// Sized to keep the allreduce busy well past the port coming back.
const NBYTES: u64 = 186 << 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailoverReport {
    pub nic_gbps: f64,
    pub fault_port: String,
    pub down_at_ns: u64,
    pub up_at_ns: u64,
    pub retry_timeout_ns: u64,
    pub switch_to_backup_ns: Option<u64>,
    pub switch_to_primary_ns: Option<u64>,
    /// Fault to first backup switch.
    pub retry_ns: Option<u64>,
    pub phases: Vec<PhaseThroughput>,
    /// Max-min share of the backup paths summed over connections.
    pub backup_expected_gbps: f64,
    pub status: CollectiveStatus,
    pub correct: bool,
    pub integrity: bool,
    pub makespan_ns: Option<u64>,
    pub switches: usize,
    /// Same run with failover disabled.
    pub baseline_status: CollectiveStatus,
    pub baseline_aborted_at_ns: Option<u64>,
}

fn topology() -> Result<Topology, HarnessError> {
    Ok(Topology::clos(&ClosConfig {
        hosts: 2,
        gpus_per_host: 1,
        nics_per_host: 2,
        leaves: 2,
        spines: 2,
        nic_gbps: NIC_GBPS,
        ..ClosConfig::default()
    })?)
}

struct Run {
    eng: TransportEngine,
    comm: Communicator,
    result: crate::collectives::CollectiveResult,
}

fn simulate(params: &ScenarioParams, failover: bool) -> Result<Run, HarnessError> {
    let topo = topology()?;
    let mut cfg = TransportConfig {
        chunk_size: 64 << 20,
        failover,
        ..TransportConfig::default()
    };
    params.overrides.apply(&mut cfg);
    let ranks = vec![topo.gpu(HostId(0), 0), topo.gpu(HostId(1), 0)];
    let group = CommGroup::new(
        &topo,
        ranks,
        RingMode::Default,
        Default::default(),
        params.overrides.channels(1),
        cfg.qp_number,
    )?;
    let port = topo.nic(HostId(0), 0);
    let mut eng = TransportEngine::new(topo, cfg)?;
    eng.load_faults(&FaultScript::outage(
        port,
        SimTime::from_secs(DOWN_S),
        Some(SimTime::from_secs(UP_S)),
    ))?;
    let mut comm = Communicator::new(group);
    let result = comm.run(
        &mut eng,
        CollectiveOp::AllReduce { nbytes: NBYTES },
        SimTime::from_secs(600),
    )?;
    Ok(Run { eng, comm, result })
}

fn backup_share(eng: &TransportEngine, comm: &Communicator) -> f64 {
    let topo = eng.topology();
    comm.connections()
        .filter_map(|c| eng.connection(c).backup)
        .filter_map(|p| {
            let path = topo
                .path(Node::Nic(p.src_port?), Node::Nic(p.dst_port?))
                .ok()?;
            path.links
                .iter()
                .map(|&l| topo.link(l).capacity_bps)
                .reduce(f64::min)
        })
        .sum::<f64>()
        / 1e9
}

fn measure(params: &ScenarioParams) -> Result<(FailoverReport, Vec<OutputFile>), HarnessError> {
    let run = simulate(params, true)?;
    let base = simulate(params, false)?;
    let eng = &run.eng;
    let cfg = eng.config();
    let conns: Vec<_> = run.comm.connections().collect();
    let first = |role: QpRole| {
        conns
            .iter()
            .flat_map(|&c| eng.connection(c).switches.iter())
            .filter(|s| s.to == role)
            .map(|s| s.time)
            .min()
    };
    let (to_backup, to_primary) = (first(QpRole::Backup), first(QpRole::Primary));
    let records: Vec<MessageRecord> = conns
        .iter()
        .flat_map(|&c| eng.connection(c).messages.iter().copied())
        .collect();
    let end = run.result.end.unwrap_or(eng.now());
    let down = SimTime::from_secs(DOWN_S);
    let mut marks = vec![("primary", SimTime::ZERO), ("retry", down)];
    if let Some(t) = to_backup {
        marks.push(("backup", t));
    }
    if let Some(t) = to_primary {
        marks.push(("restored", t));
    }
    let integrity = eng
        .transfers()
        .iter()
        .filter(|t| conns.contains(&t.conn))
        .all(|t| eng.verify(t.id).ok());
    let report = FailoverReport {
        nic_gbps: NIC_GBPS,
        fault_port: "h0.nic0".into(),
        down_at_ns: down.0,
        up_at_ns: SimTime::from_secs(UP_S).0,
        retry_timeout_ns: retry_timeout(cfg.timeout_exponent, cfg.retry_count).0,
        switch_to_backup_ns: to_backup.map(|t| t.0),
        switch_to_primary_ns: to_primary.map(|t| t.0),
        retry_ns: to_backup.map(|t| (t - down).0),
        phases: phase_throughput(&records, &marks, end),
        backup_expected_gbps: backup_share(eng, &run.comm),
        status: run.result.status,
        correct: run.result.correct,
        integrity,
        makespan_ns: run.result.end.map(|t| t.0),
        switches: run.result.switches,
        baseline_status: base.result.status,
        baseline_aborted_at_ns: (base.result.status == CollectiveStatus::Failed)
            .then(|| base.eng.now().0),
    };
    let mut sw = String::from("time_ns,conn_id,to,reason,resume_chunk\n");
    for &c in &conns {
        for s in &eng.connection(c).switches {
            sw.push_str(&format!(
                "{},{},{:?},{:?},{}\n",
                s.time.0, c.0, s.to, s.reason, s.resume_chunk
            ));
        }
    }
    let base_records: Vec<MessageRecord> = base
        .comm
        .connections()
        .flat_map(|c| base.eng.connection(c).messages.iter().copied())
        .collect();
    let bin = bin_for(end);
    let files = vec![
        OutputFile::new(
            "throughput.csv",
            throughput_csv(&binned_throughput(&records, bin, end)),
        ),
        OutputFile::new(
            "baseline_throughput.csv",
            throughput_csv(&binned_throughput(&base_records, bin, end)),
        ),
        OutputFile::new("switches.csv", sw),
        OutputFile::new("transport_log.csv", eng.log_csv()),
    ];
    Ok((report, files))
}

pub fn failover_figure10(params: &ScenarioParams) -> Result<FailoverReport, HarnessError> {
    Ok(measure(params)?.0)
}

pub(super) fn run(params: &ScenarioParams) -> Result<Outcome, HarnessError> {
    let (r, files) = measure(params)?;
    let mut summary = RunSummary::new("failover-figure10", params.seed);
    summary.makespan_ns = r.makespan_ns;
    summary.integrity = Some(r.integrity);
    summary.phases = r.phases.clone();
    if r.status != CollectiveStatus::Completed || !r.correct || !r.integrity {
        summary.status = RunStatus::Aborted {
            reason: "allreduce did not survive the port failure".into(),
        };
    }
    summary.metrics = serde_json::to_value(&r).expect("plain data");
    Ok(Outcome { summary, files })
}
