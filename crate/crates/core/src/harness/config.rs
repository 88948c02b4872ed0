//! Run configuration files, environment overrides and validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::phases::{binned_throughput, phase_throughput, throughput_csv};
use super::{HarnessError, Outcome, OutputFile, RunStatus, RunSummary};
use crate::collectives::{
    CollectiveOp, CollectiveStatus, CommGroup, Communicator, FlipPolicy, RingMode,
};
use crate::monitor::{records_csv, sample_series, samples_csv, stats};
use crate::netsim::{ClosConfig, FaultEntry, FaultScript, HostId, PortState, Topology};
use crate::pipeline::{run_1f1b, PipelineConfig};
use crate::time::SimTime;
use crate::transport::{MessageRecord, TransferStatus, TransportConfig, TransportEngine};
use crate::verbs::QpRole;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(field: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn warning(field: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Self::error(field, message)
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{s}: {}: {}", self.field, self.message)
    }
}

/// Settings that can be forced from the environment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub ib_timeout: Option<u32>,
    pub ib_retry_cnt: Option<u32>,
    pub window_size: Option<usize>,
    pub qp_number: Option<usize>,
    pub channel_number: Option<usize>,
}

impl Overrides {
    pub const IB_TIMEOUT: &'static str = "CCLSIM_IB_TIMEOUT";
    pub const IB_RETRY_CNT: &'static str = "CCLSIM_IB_RETRY_CNT";
    pub const WINDOW_SIZE: &'static str = "CCLSIM_WINDOW_SIZE";
    pub const QP_NUMBER: &'static str = "CCLSIM_QP_NUMBER";
    pub const CHANNEL_NUMBER: &'static str = "CCLSIM_CHANNEL_NUMBER";

    pub fn from_env() -> Result<Self, Vec<Diagnostic>> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, Vec<Diagnostic>> {
        let mut diags = Vec::new();
        let mut num = |k: &str| -> Option<u64> {
            let v = get(k)?;
            match v.trim().parse::<u64>() {
                Ok(n) => Some(n),
                Err(_) => {
                    diags.push(Diagnostic::error(
                        k,
                        format!("expected a non-negative integer, got `{v}`"),
                    ));
                    None
                }
            }
        };
        let o = Overrides {
            ib_timeout: num(Self::IB_TIMEOUT).map(|n| n as u32),
            ib_retry_cnt: num(Self::IB_RETRY_CNT).map(|n| n as u32),
            window_size: num(Self::WINDOW_SIZE).map(|n| n as usize),
            qp_number: num(Self::QP_NUMBER).map(|n| n as usize),
            channel_number: num(Self::CHANNEL_NUMBER).map(|n| n as usize),
        };
        if diags.is_empty() {
            Ok(o)
        } else {
            Err(diags)
        }
    }

    pub fn apply(&self, t: &mut TransportConfig) {
        if let Some(v) = self.ib_timeout {
            t.timeout_exponent = v;
        }
        if let Some(v) = self.ib_retry_cnt {
            t.retry_count = v;
        }
        if let Some(v) = self.qp_number {
            t.qp_number = v;
        }
    }

    pub fn windows(&self, default: &[usize]) -> Vec<usize> {
        match self.window_size {
            Some(w) => vec![w],
            None => default.to_vec(),
        }
    }

    pub fn channels(&self, default: usize) -> usize {
        self.channel_number.unwrap_or(default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingWorkload {
    pub nbytes: u64,
    #[serde(default)]
    pub ring_mode: RingMode,
    #[serde(default)]
    pub flip: FlipPolicy,
    pub channels: Option<usize>,
    /// Host indices; all hosts when unset.
    pub hosts: Option<Vec<usize>>,
    #[serde(default = "one")]
    pub iterations: u32,
}

fn one() -> u32 {
    1
}

fn second_host() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Workload {
    P2p {
        bytes: u64,
        #[serde(default = "one")]
        messages: u32,
        #[serde(default)]
        src_host: usize,
        #[serde(default = "second_host")]
        dst_host: usize,
    },
    Allreduce(RingWorkload),
    Reducescatter(RingWorkload),
    Alltoall {
        nbytes_per_pair: u64,
        hosts: Option<Vec<usize>>,
    },
    Pipeline(PipelineConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    /// `h<host>.nic<index>` or `nic<global index>`.
    pub port: String,
    pub at_ns: Option<u64>,
    pub at_s: Option<f64>,
    pub state: PortState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultFile {
    #[serde(default, rename = "fault")]
    pub faults: Vec<FaultSpec>,
}

impl FaultFile {
    pub fn to_script(&self, topo: &Topology) -> Result<FaultScript, Vec<Diagnostic>> {
        let mut diags = Vec::new();
        let mut entries = Vec::new();
        for (i, f) in self.faults.iter().enumerate() {
            let field = |k: &str| format!("fault[{i}].{k}");
            let port = match topo.parse_port(&f.port) {
                Ok(p) => Some(p),
                Err(_) => {
                    diags.push(Diagnostic::error(
                        field("port"),
                        format!("unknown port `{}`", f.port),
                    ));
                    None
                }
            };
            let at = match (f.at_ns, f.at_s) {
                (Some(ns), None) => Some(SimTime(ns)),
                (None, Some(s)) if s.is_finite() && s >= 0.0 => Some(SimTime::from_secs_f64(s)),
                (None, Some(_)) => {
                    diags.push(Diagnostic::error(
                        field("at_s"),
                        "time must be a non-negative number",
                    ));
                    None
                }
                _ => {
                    diags.push(Diagnostic::error(
                        field("at"),
                        "set exactly one of at_ns and at_s",
                    ));
                    None
                }
            };
            if let (Some(port), Some(at)) = (port, at) {
                entries.push(FaultEntry {
                    at,
                    port,
                    state: f.state,
                });
            }
        }
        entries.sort_by_key(|e| e.at);
        let script = FaultScript::new(entries);
        if diags.is_empty() {
            if let Err(e) = script.validate(topo) {
                diags.push(Diagnostic::error("fault", e.to_string()));
            }
        }
        if diags.is_empty() {
            Ok(script)
        } else {
            Err(diags)
        }
    }
}

fn default_windows() -> Vec<usize> {
    vec![8]
}

fn default_name() -> String {
    "custom".into()
}

/// One simulation run described in TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_windows")]
    pub window_sizes: Vec<usize>,
    /// TOML file holding a `ClosConfig`; `clos` is used when unset.
    pub topology: Option<PathBuf>,
    #[serde(default)]
    pub clos: ClosConfig,
    /// TOML file of `[[fault]]` entries.
    pub faults: Option<PathBuf>,
    #[serde(default)]
    pub transport: TransportConfig,
    pub workload: Workload,
    pub horizon_s: Option<f64>,
}

/// A config with its files loaded and cross-checked.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub cfg: RunConfig,
    pub topo: Topology,
    pub faults: FaultScript,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path, field: &str) -> Result<T, Diagnostic> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Diagnostic::error(field, format!("cannot read `{}`: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| Diagnostic::error(field, format!("`{}`: {}", path.display(), e.message())))
}

/// Parses a config file and applies `overrides`.
pub fn load_run_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, Vec<Diagnostic>> {
    let mut cfg: RunConfig = read_toml(path, "config").map_err(|d| vec![d])?;
    overrides.apply(&mut cfg.transport);
    if overrides.window_size.is_some() {
        cfg.window_sizes = overrides.windows(&cfg.window_sizes);
    }
    if let Some(ch) = overrides.channel_number {
        if let Workload::Allreduce(r) | Workload::Reducescatter(r) = &mut cfg.workload {
            r.channels = Some(ch);
        }
    }
    Ok(cfg)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub(crate) fn prepare(cfg: RunConfig, base: &Path) -> (Vec<Diagnostic>, Option<Prepared>) {
    let mut diags = Vec::new();
    for (i, &w) in cfg.window_sizes.iter().enumerate() {
        if w == 0 {
            diags.push(Diagnostic::error(
                format!("window_sizes[{i}]"),
                "window size must be ≥ 1",
            ));
        }
    }
    if let Some(h) = cfg.horizon_s {
        if !(h > 0.0 && h.is_finite()) {
            diags.push(Diagnostic::error(
                "horizon_s",
                "horizon must be a positive number of seconds",
            ));
        }
    }
    if let Err(e) = cfg.transport.validate() {
        diags.push(Diagnostic::error("transport", e.to_string()));
    }
    let clos = match &cfg.topology {
        Some(p) => {
            let p = resolve(base, p);
            if !p.exists() {
                diags.push(Diagnostic::error(
                    "topology",
                    format!("topology file `{}` not found", p.display()),
                ));
                None
            } else {
                read_toml::<ClosConfig>(&p, "topology")
                    .map_err(|d| diags.push(d))
                    .ok()
            }
        }
        None => Some(cfg.clos.clone()),
    };
    let topo = clos.and_then(|c| {
        Topology::clos(&c)
            .map_err(|e| diags.push(Diagnostic::error("topology", e.to_string())))
            .ok()
    });
    let Some(topo) = topo else {
        return (diags, None);
    };
    let faults = match &cfg.faults {
        Some(p) => {
            let p = resolve(base, p);
            if !p.exists() {
                diags.push(Diagnostic::error(
                    "faults",
                    format!("fault file `{}` not found", p.display()),
                ));
                FaultScript::default()
            } else {
                match read_toml::<FaultFile>(&p, "faults") {
                    Ok(f) => f.to_script(&topo).unwrap_or_else(|d| {
                        diags.extend(d);
                        FaultScript::default()
                    }),
                    Err(d) => {
                        diags.push(d);
                        FaultScript::default()
                    }
                }
            }
        }
        None => FaultScript::default(),
    };
    let n_hosts = topo.hosts.len();
    let check_hosts = |hosts: &Option<Vec<usize>>, diags: &mut Vec<Diagnostic>| {
        if let Some(hs) = hosts {
            for (i, &h) in hs.iter().enumerate() {
                if h >= n_hosts {
                    diags.push(Diagnostic::error(
                        format!("workload.hosts[{i}]"),
                        format!("host {h} outside 0..{n_hosts}"),
                    ));
                }
            }
        }
    };
    match &cfg.workload {
        Workload::P2p {
            bytes,
            messages,
            src_host,
            dst_host,
        } => {
            if *bytes == 0 {
                diags.push(Diagnostic::error(
                    "workload.bytes",
                    "message size must be positive",
                ));
            }
            if *messages == 0 {
                diags.push(Diagnostic::warning(
                    "workload.messages",
                    "no messages to send",
                ));
            }
            for (k, h) in [("src_host", src_host), ("dst_host", dst_host)] {
                if *h >= n_hosts {
                    diags.push(Diagnostic::error(
                        format!("workload.{k}"),
                        format!("host {h} outside 0..{n_hosts}"),
                    ));
                }
            }
        }
        Workload::Allreduce(r) | Workload::Reducescatter(r) => {
            check_hosts(&r.hosts, &mut diags);
            if r.channels == Some(0) {
                diags.push(Diagnostic::error(
                    "workload.channels",
                    "channel count must be ≥ 1",
                ));
            }
        }
        Workload::Alltoall { hosts, .. } => check_hosts(hosts, &mut diags),
        Workload::Pipeline(p) => {
            if let Err(e) = p.validate() {
                diags.push(Diagnostic::error("workload", e.to_string()));
            }
        }
    }
    let ok = !diags.iter().any(|d| d.severity == Severity::Error);
    (diags, ok.then_some(Prepared { cfg, topo, faults }))
}

/// Parses and cross-checks a config without running it. Empty means valid.
pub fn validate_config(path: &Path, overrides: &Overrides) -> Vec<Diagnostic> {
    match load_run_config(path, overrides) {
        Ok(cfg) => prepare(cfg, path.parent().unwrap_or(Path::new("."))).0,
        Err(d) => d,
    }
}

fn horizon(cfg: &RunConfig) -> SimTime {
    SimTime::from_secs_f64(cfg.horizon_s.unwrap_or(3600.0))
}

/// Runs a config file end to end.
pub fn run_config(path: &Path, overrides: &Overrides) -> Result<Outcome, HarnessError> {
    let cfg = load_run_config(path, overrides).map_err(HarnessError::Config)?;
    run_loaded_config(cfg, path.parent().unwrap_or(Path::new(".")))
}

/// Runs an already parsed config; relative file paths resolve against `base`.
pub fn run_loaded_config(cfg: RunConfig, base: &Path) -> Result<Outcome, HarnessError> {
    let (diags, prepared) = prepare(cfg, base);
    execute(prepared.ok_or(HarnessError::Config(diags))?)
}

/// Validates an already parsed config. Empty means valid.
pub fn validate_loaded_config(cfg: RunConfig, base: &Path) -> Vec<Diagnostic> {
    prepare(cfg, base).0
}

fn execute(p: Prepared) -> Result<Outcome, HarnessError> {
    let Prepared { cfg, topo, faults } = p;
    let mut summary = RunSummary::new(&cfg.name, cfg.seed);
    let mut files = Vec::new();
    if let Workload::Pipeline(pc) = &cfg.workload {
        let r = run_1f1b(pc)?;
        summary.makespan_ns = Some(r.makespan.0);
        summary.metrics = serde_json::json!({
            "mode": r.mode,
            "bubble_ns": r.bubble.0,
            "p2p_ns": r.p2p_time.0,
            "critical_worker": r.critical_worker,
        });
        files.push(OutputFile::new("timeline.csv", r.timeline_csv()));
        return Ok(Outcome { summary, files });
    }

    let mut eng = TransportEngine::new(topo.clone(), cfg.transport.clone())?;
    eng.load_faults(&faults)?;
    let limit = horizon(&cfg);
    let hosts_or_all = |h: &Option<Vec<usize>>| -> Vec<HostId> {
        match h {
            Some(v) => v.iter().map(|&i| HostId(i)).collect(),
            None => (0..topo.hosts.len()).map(HostId).collect(),
        }
    };
    let mut aborted: Option<String> = None;
    let mut end = SimTime::ZERO;
    let mut ops = Vec::new();
    match &cfg.workload {
        Workload::P2p {
            bytes,
            messages,
            src_host,
            dst_host,
        } => {
            let (a, b) = (
                topo.gpu(HostId(*src_host), 0),
                topo.gpu(HostId(*dst_host), 0),
            );
            let conn = eng.open_connection(a, b)?;
            let ids = (0..*messages)
                .map(|_| eng.send_message(conn, *bytes))
                .collect::<Result<Vec<_>, _>>()?;
            while ids
                .iter()
                .any(|&t| eng.transfer(t).status == TransferStatus::InProgress)
            {
                if eng.step(limit)?.is_none() {
                    break;
                }
            }
            for &t in &ids {
                match (eng.transfer(t).status, eng.transfer(t).completed_at) {
                    (TransferStatus::Completed, Some(at)) => end = end.max(at),
                    (TransferStatus::Failed, _) => {
                        aborted = Some(format!("{t} failed: connection lost"))
                    }
                    _ => aborted = Some(format!("{t} unfinished at the horizon")),
                }
            }
        }
        Workload::Allreduce(r) | Workload::Reducescatter(r) => {
            let ranks = hosts_or_all(&r.hosts)
                .iter()
                .flat_map(|h| topo.hosts[h.0].gpus.clone())
                .collect();
            let group = CommGroup::new(
                &topo,
                ranks,
                r.ring_mode,
                r.flip,
                r.channels.unwrap_or(1),
                cfg.transport.qp_number,
            )?;
            let op = match cfg.workload {
                Workload::Allreduce(_) => CollectiveOp::AllReduce { nbytes: r.nbytes },
                _ => CollectiveOp::ReduceScatter { nbytes: r.nbytes },
            };
            let mut comm = Communicator::new(group);
            for _ in 0..r.iterations {
                let res = comm.run(&mut eng, op, limit)?;
                let failed = res.status == CollectiveStatus::Failed || !res.correct;
                end = res.end.unwrap_or(end);
                ops.push(res);
                if failed {
                    aborted = Some("collective aborted: connection failed".into());
                    break;
                }
            }
        }
        Workload::Alltoall {
            nbytes_per_pair,
            hosts,
        } => {
            let ranks = hosts_or_all(hosts)
                .iter()
                .flat_map(|h| topo.hosts[h.0].gpus.clone())
                .collect();
            let group = CommGroup::new(
                &topo,
                ranks,
                RingMode::Default,
                FlipPolicy::Odd,
                1,
                cfg.transport.qp_number,
            )?;
            let res = Communicator::new(group).run(
                &mut eng,
                CollectiveOp::AllToAll {
                    nbytes_per_pair: *nbytes_per_pair,
                },
                limit,
            )?;
            if res.status == CollectiveStatus::Failed {
                aborted = Some("collective aborted: connection failed".into());
            }
            end = res.end.unwrap_or(end);
            ops.push(res);
        }
        Workload::Pipeline(_) => unreachable!(),
    }

    let integrity = eng
        .transfers()
        .iter()
        .filter(|t| t.status == TransferStatus::Completed)
        .all(|t| eng.verify(t.id).ok());
    if !integrity {
        aborted.get_or_insert_with(|| "integrity check failed".into());
    }
    summary.integrity = Some(integrity);
    summary.makespan_ns = aborted.is_none().then_some(end.0);
    if let Some(reason) = aborted {
        summary.status = RunStatus::Aborted { reason };
    }

    // Monitor and phases follow the busiest connection.
    let busiest = eng
        .connections()
        .iter()
        .max_by_key(|c| (c.messages.len(), std::cmp::Reverse(c.id)));
    let records: Vec<MessageRecord> = busiest.map(|c| c.messages.clone()).unwrap_or_default();
    for &w in &cfg.window_sizes {
        let s = sample_series(&records, w)?;
        if let Some(st) = stats(&s) {
            summary.monitor.insert(w.to_string(), st);
        }
        files.push(OutputFile::new(
            format!("samples_w{w}.csv"),
            samples_csv(&s),
        ));
    }
    let all: Vec<MessageRecord> = eng
        .connections()
        .iter()
        .flat_map(|c| c.messages.iter().copied())
        .collect();
    let stop = end.max(all.iter().map(|r| r.t2).max().unwrap_or(SimTime::ZERO));
    if let Some(c) = busiest {
        let mut marks = vec![("primary", SimTime::ZERO)];
        if let Some(first) = faults.entries.iter().find(|f| f.state == PortState::Down) {
            if !c.switches.is_empty() {
                marks.push(("retry", first.at));
            }
        }
        for s in &c.switches {
            marks.push((
                if s.to == QpRole::Backup {
                    "backup"
                } else {
                    "restored"
                },
                s.time,
            ));
        }
        summary.phases = phase_throughput(&all, &marks, stop);
    }
    let switches: Vec<_> = eng
        .connections()
        .iter()
        .flat_map(|c| c.switches.iter().map(move |s| (c.id, *s)))
        .collect();
    let mut sw = String::from("time_ns,conn_id,to,reason,resume_chunk\n");
    for (c, s) in &switches {
        sw.push_str(&format!(
            "{},{},{:?},{:?},{}\n",
            s.time.0, c.0, s.to, s.reason, s.resume_chunk
        ));
    }
    let per_op: Vec<serde_json::Value> = ops.iter().map(|r| r.to_json()).collect();
    let mut m = BTreeMap::new();
    m.insert("switches", serde_json::json!(switches.len()));
    m.insert("transfers", serde_json::json!(eng.transfers().len()));
    m.insert("collectives", serde_json::Value::Array(per_op));
    summary.metrics = serde_json::to_value(m).expect("plain data");
    files.push(OutputFile::new("messages.csv", records_csv(&all)));
    files.push(OutputFile::new(
        "throughput.csv",
        throughput_csv(&binned_throughput(&all, bin_for(stop), stop)),
    ));
    files.push(OutputFile::new("switches.csv", sw));
    files.push(OutputFile::new("transport_log.csv", eng.log_csv()));
    files.push(OutputFile::new("trace.csv", eng.trace().to_csv()));
    Ok(Outcome { summary, files })
}

/// About 200 bins over the run, rounded to a power of ten.
pub(crate) fn bin_for(span: SimTime) -> SimTime {
    let raw = (span.0 / 200).max(1);
    SimTime(10u64.pow(raw.ilog10()))
}
