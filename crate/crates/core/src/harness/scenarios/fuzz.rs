use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::harness::{HarnessError, Outcome, OutputFile, RunStatus, RunSummary, ScenarioParams};
use crate::netsim::{ClosConfig, HostId, NicPortId, PortState, Topology, TraceLevel};
use crate::time::SimTime;
use crate::transport::{TransferStatus, TransportConfig, TransportEngine};

const DEFAULT_TRIALS: u32 = 1000;
const MIN_BYTES: u64 = 1 << 10;
const MAX_BYTES: u64 = 64 << 20;
const CHUNK: u64 = 1 << 20;
const HORIZON: SimTime = SimTime::from_secs(10);
/// Outages start inside the first 6 ms, roughly one 64 MiB transfer.
const FAULT_SPAN_NS: u64 = 6_000_000;
const PERMANENT_P: f64 = 0.2;
/// Longer than any transient outage the generator produces.
const RECONNECT_WINDOW_NS: u64 = 50_000_000;

/// Path availability over the whole trial, primary and backup each needing
/// both of their ports up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FuzzClass {
    /// Some path is up at every instant.
    AlwaysLive,
    /// Both paths are down together at some point, one stays up for good later.
    EventuallyAlive,
    /// Both paths end up down for good.
    NeverRecovers,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outage {
    pub port: String,
    pub down_ns: u64,
    pub up_ns: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzTrial {
    pub index: u32,
    pub bytes: u64,
    pub outages: Vec<Outage>,
    pub class: FuzzClass,
    pub status: TransferStatus,
    pub checksum_match: bool,
    pub exactly_once_in_order: bool,
    /// Delivered chunks are `0..k` for some `k`, without repeats.
    pub clean_prefix: bool,
    pub delivered_chunks: u64,
    pub total_chunks: u64,
    pub switches: usize,
    pub end_ns: u64,
}

impl FuzzTrial {
    /// Completed trials must be intact; failed ones must not have written
    /// anything out of order; an always-live trial must complete.
    pub fn violation(&self) -> bool {
        match self.status {
            TransferStatus::Completed => !(self.checksum_match && self.exactly_once_in_order),
            TransferStatus::Failed => !self.clean_prefix || self.class == FuzzClass::AlwaysLive,
            TransferStatus::InProgress => self.class != FuzzClass::NeverRecovers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCount {
    pub trials: u32,
    pub completed_intact: u32,
    pub failed: u32,
    pub unfinished: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzReport {
    pub trials: u32,
    pub classes: BTreeMap<FuzzClass, ClassCount>,
    pub violations: Vec<u32>,
    /// Trials with a path eventually alive that did not complete intact.
    pub eventually_alive_incomplete: Vec<u32>,
    pub min_bytes: u64,
    pub max_bytes: u64,
    #[serde(skip)]
    pub rows: Vec<FuzzTrial>,
}

fn topology() -> Result<Topology, HarnessError> {
    Ok(Topology::clos(&ClosConfig {
        hosts: 2,
        gpus_per_host: 1,
        nics_per_host: 2,
        leaves: 2,
        spines: 2,
        nic_gbps: 100.0,
        ..ClosConfig::default()
    })?)
}

/// Merged down intervals of one port; `None` end means never back up.
type Intervals = Vec<(u64, Option<u64>)>;

fn merge(mut v: Intervals) -> Intervals {
    v.sort_by_key(|i| i.0);
    let mut out: Intervals = Vec::new();
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if last.1.is_none_or(|le| s <= le) => {
                last.1 = match (last.1, e) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    _ => None,
                };
            }
            _ => out.push((s, e)),
        }
    }
    out
}

fn down_at(iv: &Intervals, t: u64) -> bool {
    iv.iter().any(|&(s, e)| t >= s && e.is_none_or(|e| t < e))
}

fn classify(
    ports: &BTreeMap<NicPortId, Intervals>,
    primary: [NicPortId; 2],
    backup: [NicPortId; 2],
) -> FuzzClass {
    let none = Intervals::new();
    let iv = |p: NicPortId| ports.get(&p).unwrap_or(&none);
    let path_down = |path: [NicPortId; 2], t: u64| path.iter().any(|&p| down_at(iv(p), t));
    let forever = |path: [NicPortId; 2]| path.iter().any(|&p| iv(p).iter().any(|i| i.1.is_none()));
    if forever(primary) && forever(backup) {
        return FuzzClass::NeverRecovers;
    }
    // availability only changes at interval edges
    let mut edges: Vec<u64> = ports
        .values()
        .flatten()
        .flat_map(|&(s, e)| [Some(s), e])
        .flatten()
        .collect();
    edges.push(0);
    if edges
        .iter()
        .any(|&t| path_down(primary, t) && path_down(backup, t))
    {
        FuzzClass::EventuallyAlive
    } else {
        FuzzClass::AlwaysLive
    }
}

fn trial(seed: u64, index: u32, names: &[(NicPortId, String)]) -> Result<FuzzTrial, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let lo = (MIN_BYTES as f64).ln();
    let hi = (MAX_BYTES as f64).ln();
    let bytes = (rng.gen_range(lo..=hi).exp().round() as u64).clamp(MIN_BYTES, MAX_BYTES);
    let n_out = rng.gen_range(0..=3);
    let mut outages = Vec::new();
    let mut per_port: BTreeMap<NicPortId, Intervals> = BTreeMap::new();
    for _ in 0..n_out {
        let (port, name) = &names[rng.gen_range(0..names.len())];
        let down = rng.gen_range(0..FAULT_SPAN_NS);
        let up = (!rng.gen_bool(PERMANENT_P)).then(|| down + rng.gen_range(10_000..=2_000_000));
        per_port.entry(*port).or_default().push((down, up));
        outages.push(Outage {
            port: name.clone(),
            down_ns: down,
            up_ns: up,
        });
    }
    for v in per_port.values_mut() {
        *v = merge(std::mem::take(v));
    }

    let topo = topology()?;
    let cfg = TransportConfig {
        chunk_size: CHUNK,
        timeout_exponent: 4,
        retry_count: 1,
        probe_period_ns: 200_000,
        reconnect_window_ns: RECONNECT_WINDOW_NS,
        chunk_log: false,
        record_messages: false,
        trace_level: TraceLevel::Off,
        ..TransportConfig::default()
    };
    let (a, b) = (topo.gpu(HostId(0), 0), topo.gpu(HostId(1), 0));
    let mut eng = TransportEngine::new(topo, cfg)?;
    for (&port, iv) in &per_port {
        for &(s, e) in iv {
            eng.schedule_fault(SimTime(s), port, PortState::Down)?;
            if let Some(e) = e {
                eng.schedule_fault(SimTime(e), port, PortState::Up)?;
            }
        }
    }
    let conn = eng.open_connection(a, b)?;
    let c = eng.connection(conn);
    let pair = |p: &crate::transport::QpPair| {
        [
            p.src_port.expect("network path"),
            p.dst_port.expect("network path"),
        ]
    };
    let primary = pair(&c.primary);
    let backup = pair(c.backup.as_ref().expect("two QPs"));
    let class = classify(&per_port, primary, backup);
    let t = eng.send_message(conn, bytes)?;
    while eng.transfer(t).status == TransferStatus::InProgress {
        if eng.step(HORIZON)?.is_none() {
            break;
        }
    }
    let x = eng.transfer(t);
    let v = eng.verify(t);
    let mut seen = vec![false; x.total_chunks() as usize];
    let clean_prefix = x
        .delivery
        .iter()
        .enumerate()
        .all(|(i, &k)| i as u64 == k && !std::mem::replace(&mut seen[k as usize], true));
    Ok(FuzzTrial {
        index,
        bytes,
        outages,
        class,
        status: x.status,
        checksum_match: v.checksum_match,
        exactly_once_in_order: v.exactly_once_in_order,
        clean_prefix,
        delivered_chunks: x.delivery.len() as u64,
        total_chunks: x.total_chunks(),
        switches: eng.connection(conn).switches.len(),
        end_ns: x.completed_at.unwrap_or(eng.now()).0,
    })
}

pub fn fuzz_failover(params: &ScenarioParams) -> Result<FuzzReport, HarnessError> {
    let topo = topology()?;
    let names: Vec<(NicPortId, String)> = (0..2)
        .flat_map(|h| (0..2).map(move |i| (h, i)))
        .map(|(h, i)| (topo.nic(HostId(h), i), format!("h{h}.nic{i}")))
        .collect();
    let n = params.trials.unwrap_or(DEFAULT_TRIALS);
    let rows = (0..n)
        .map(|i| trial(params.seed, i, &names))
        .collect::<Result<Vec<_>, _>>()?;
    let mut classes: BTreeMap<FuzzClass, ClassCount> = BTreeMap::new();
    for r in &rows {
        let c = classes.entry(r.class).or_insert(ClassCount {
            trials: 0,
            completed_intact: 0,
            failed: 0,
            unfinished: 0,
        });
        c.trials += 1;
        match r.status {
            TransferStatus::Completed if !r.violation() => c.completed_intact += 1,
            TransferStatus::Completed => {}
            TransferStatus::Failed => c.failed += 1,
            TransferStatus::InProgress => c.unfinished += 1,
        }
    }
    Ok(FuzzReport {
        trials: n,
        classes,
        violations: rows
            .iter()
            .filter(|r| r.violation())
            .map(|r| r.index)
            .collect(),
        eventually_alive_incomplete: rows
            .iter()
            .filter(|r| r.class != FuzzClass::NeverRecovers)
            .filter(|r| {
                !(r.status == TransferStatus::Completed
                    && r.checksum_match
                    && r.exactly_once_in_order)
            })
            .map(|r| r.index)
            .collect(),
        min_bytes: rows.iter().map(|r| r.bytes).min().unwrap_or(0),
        max_bytes: rows.iter().map(|r| r.bytes).max().unwrap_or(0),
        rows,
    })
}

fn trials_csv(rows: &[FuzzTrial]) -> String {
    let mut s = String::from("trial,bytes,outages,class,status,checksum_match,exactly_once_in_order,clean_prefix,delivered,total,switches,end_ns\n");
    for r in rows {
        let outages: Vec<String> = r
            .outages
            .iter()
            .map(|o| {
                format!(
                    "{}@{}-{}",
                    o.port,
                    o.down_ns,
                    o.up_ns.map_or("inf".to_string(), |u| u.to_string())
                )
            })
            .collect();
        let class = serde_json::to_value(r.class).expect("plain data");
        s.push_str(&format!(
            "{},{},{},{},{:?},{},{},{},{},{},{},{}\n",
            r.index,
            r.bytes,
            outages.join(" "),
            class.as_str().unwrap_or(""),
            r.status,
            r.checksum_match,
            r.exactly_once_in_order,
            r.clean_prefix,
            r.delivered_chunks,
            r.total_chunks,
            r.switches,
            r.end_ns
        ));
    }
    s
}

pub(super) fn run(params: &ScenarioParams) -> Result<Outcome, HarnessError> {
    let r = fuzz_failover(params)?;
    let mut summary = RunSummary::new("fuzz-failover", params.seed);
    summary.integrity = Some(r.violations.is_empty());
    summary.makespan_ns = r.rows.iter().map(|t| t.end_ns).max();
    if !r.violations.is_empty() {
        summary.status = RunStatus::Aborted {
            reason: format!("{} trials violated delivery guarantees", r.violations.len()),
        };
    }
    summary.metrics = serde_json::to_value(&r).expect("plain data");
    Ok(Outcome {
        summary,
        files: vec![OutputFile::new("trials.csv", trials_csv(&r.rows))],
    })
}
