use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::collectives::{
    ring_allreduce, sort_hostfile, CollectiveStatus, CommGroup, Hostfile, RingMode,
};
use crate::harness::{HarnessError, Outcome, OutputFile, RunStatus, RunSummary, ScenarioParams};
use crate::netsim::{ClosConfig, HostId, Topology};
use crate::transport::{TransportConfig, TransportEngine};

const HOSTS: usize = 4;
const GPUS: usize = 8;
const NBYTES: u64 = 256 << 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingAudit {
    pub mode: RingMode,
    pub order: Vec<usize>,
    pub inter_server_edges: usize,
    /// Inter-server edges by hop count: `[hop1, hop3, other]`.
    pub hop_histogram: [usize; 3],
    pub spine_bytes: u64,
    pub allreduce_ns: Option<u64>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingReport {
    pub default: RingAudit,
    pub topology_aware: RingAudit,
    /// Share of TopologyAware inter-server edges at one hop.
    pub aware_one_hop_share: f64,
    pub hostfile_in: Vec<usize>,
    pub hostfile_sorted: Vec<usize>,
    pub hostfile_ok: bool,
}

fn topology(rail: bool) -> Result<Topology, HarnessError> {
    Ok(Topology::clos(&ClosConfig {
        hosts: HOSTS,
        gpus_per_host: GPUS,
        nics_per_host: GPUS,
        leaves: 2,
        spines: 2,
        rail_optimized: rail,
        ..ClosConfig::default()
    })?)
}

fn audit(params: &ScenarioParams, mode: RingMode) -> Result<RingAudit, HarnessError> {
    let topo = topology(true)?;
    let hosts: Vec<HostId> = (0..HOSTS).map(HostId).collect();
    let mut cfg = TransportConfig {
        chunk_log: false,
        record_messages: false,
        ..TransportConfig::default()
    };
    params.overrides.apply(&mut cfg);
    let group = CommGroup::from_hosts(&topo, &hosts, mode, params.overrides.channels(1))?;
    let ring = &group.channels[0];
    let mut hist = [0; 3];
    for e in ring.edges.iter().filter(|e| e.hop_count > 0) {
        hist[match e.hop_count {
            1 => 0,
            3 => 1,
            _ => 2,
        }] += 1;
    }
    let order = ring.order.clone();
    let mut eng = TransportEngine::new(topo, cfg)?;
    let res = ring_allreduce(&mut eng, &group, NBYTES)?;
    Ok(RingAudit {
        mode,
        order,
        inter_server_edges: hist.iter().sum(),
        hop_histogram: hist,
        spine_bytes: res.spine_bytes,
        allreduce_ns: res.duration().map(|d| d.0),
        correct: res.status == CollectiveStatus::Completed && res.correct,
    })
}

fn hostfile_check(seed: u64) -> Result<(Hostfile, Hostfile, bool), HarnessError> {
    let topo = topology(false)?;
    let mut hosts: Vec<HostId> = (0..HOSTS).map(HostId).collect();
    hosts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let hf = Hostfile::from_topology(&topo, &hosts);
    let sorted = sort_hostfile(&hf);
    let mut a = hf.hosts();
    let mut b = sorted.hosts();
    a.sort();
    b.sort();
    let tors: Vec<_> = sorted.entries.iter().map(|e| e.1).collect();
    let contiguous = tors
        .iter()
        .enumerate()
        .all(|(i, t)| tors[..i].last() == Some(t) || !tors[..i].contains(t));
    let ok = a == b && contiguous && sort_hostfile(&sorted) == sorted;
    Ok((hf, sorted, ok))
}

pub fn ring_construction(params: &ScenarioParams) -> Result<RingReport, HarnessError> {
    let default = audit(params, RingMode::Default)?;
    let topology_aware = audit(params, RingMode::TopologyAware)?;
    let (hf, sorted, hostfile_ok) = hostfile_check(params.seed)?;
    let share = match topology_aware.inter_server_edges {
        0 => 1.0,
        n => topology_aware.hop_histogram[0] as f64 / n as f64,
    };
    Ok(RingReport {
        default,
        topology_aware,
        aware_one_hop_share: share,
        hostfile_in: hf.hosts().iter().map(|h| h.0).collect(),
        hostfile_sorted: sorted.hosts().iter().map(|h| h.0).collect(),
        hostfile_ok,
    })
}

fn rings_csv(r: &RingReport) -> String {
    let mut s = String::from("mode,position,rank\n");
    for a in [&r.default, &r.topology_aware] {
        let mode = serde_json::to_value(a.mode).expect("plain data");
        for (i, rank) in a.order.iter().enumerate() {
            s.push_str(&format!("{},{i},{rank}\n", mode.as_str().unwrap_or("")));
        }
    }
    s
}

pub(super) fn run(params: &ScenarioParams) -> Result<Outcome, HarnessError> {
    let r = ring_construction(params)?;
    let mut summary = RunSummary::new("ring-construction", params.seed);
    summary.makespan_ns = r.topology_aware.allreduce_ns;
    summary.integrity = Some(r.default.correct && r.topology_aware.correct);
    let ok = r.aware_one_hop_share == 1.0
        && r.default.hop_histogram[1] >= 1
        && r.topology_aware.spine_bytes < r.default.spine_bytes
        && r.hostfile_ok;
    if !ok {
        summary.status = RunStatus::Aborted {
            reason: "ring audit failed".into(),
        };
    }
    summary.metrics = serde_json::to_value(&r).expect("plain data");
    let mut hf = String::from("position,input_host,sorted_host\n");
    for (i, (a, b)) in r.hostfile_in.iter().zip(&r.hostfile_sorted).enumerate() {
        hf.push_str(&format!("{i},{a},{b}\n"));
    }
    Ok(Outcome {
        summary,
        files: vec![
            OutputFile::new("rings.csv", rings_csv(&r)),
            OutputFile::new("hostfile.csv", hf),
        ],
    })
}
