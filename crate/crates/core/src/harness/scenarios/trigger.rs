use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::harness::{HarnessError, Outcome, OutputFile, RunStatus, RunSummary, ScenarioParams};
use crate::netsim::{ClosConfig, HostId, PortState, Topology, TraceLevel};
use crate::time::SimTime;
use crate::transport::{
    ConnId, LogEvent, SwitchReason, TransferId, TransportConfig, TransportEngine,
};
use crate::verbs::QpRole;

const RUNS: u32 = 100;
const MIB: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Sender-side port dies mid-transfer.
    SenderRetry,
    /// Receiver-side port dies while the sender has not started.
    ReceiverProbe,
    /// Link is fine, the sender is just late.
    InnocentStall,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerRun {
    pub variant: Variant,
    pub run: u32,
    pub bytes: u64,
    pub fault_ns: Option<u64>,
    pub release_ns: Option<u64>,
    pub first_switch: Option<SwitchReason>,
    pub switches: usize,
    pub cts_ok: usize,
    pub cts_fail: usize,
    pub intact: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerReport {
    pub runs_per_variant: u32,
    pub sender_retry_pass: u32,
    pub receiver_probe_pass: u32,
    pub innocent_stall_pass: u32,
    #[serde(skip)]
    pub runs: Vec<TriggerRun>,
}

impl TriggerReport {
    pub fn all_pass(&self) -> bool {
        [
            self.sender_retry_pass,
            self.receiver_probe_pass,
            self.innocent_stall_pass,
        ]
        .iter()
        .all(|&n| n == self.runs_per_variant)
    }
}

fn rig() -> Result<(TransportEngine, ConnId), HarnessError> {
    let topo = Topology::clos(&ClosConfig {
        hosts: 2,
        gpus_per_host: 2,
        nics_per_host: 2,
        leaves: 2,
        spines: 2,
        ..ClosConfig::default()
    })?;
    let cfg = TransportConfig {
        timeout_exponent: 4,
        retry_count: 1,
        chunk_log: false,
        record_messages: false,
        trace_level: TraceLevel::Off,
        ..TransportConfig::default()
    };
    let (a, b) = (topo.gpu(HostId(0), 0), topo.gpu(HostId(1), 0));
    let mut eng = TransportEngine::new(topo, cfg)?;
    let conn = eng.open_connection(a, b)?;
    Ok((eng, conn))
}

fn one(variant: Variant, seed: u64, run: u32) -> Result<TriggerRun, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((variant as u64) << 32) | run as u64);
    let (mut eng, conn) = rig()?;
    let bytes = rng.gen_range(16..=256) * MIB;
    let primary = eng.connection(conn).primary;
    let (fault, release, t): (Option<u64>, Option<u64>, TransferId) = match variant {
        Variant::SenderRetry => {
            // somewhere inside the transmission
            let wire_ns = bytes * 8 / 400;
            let at = rng.gen_range(10_000..wire_ns * 9 / 10);
            eng.schedule_fault(
                SimTime(at),
                primary.src_port.expect("network path"),
                PortState::Down,
            )?;
            (Some(at), None, eng.send_message(conn, bytes)?)
        }
        Variant::ReceiverProbe => {
            let at = rng.gen_range(1_000..50_000);
            let rel = rng.gen_range(1_000_000..4_000_000);
            eng.schedule_fault(
                SimTime(at),
                primary.dst_port.expect("network path"),
                PortState::Down,
            )?;
            let t = eng.send_message_with(conn, bytes, false)?;
            eng.release_sender_at(t, SimTime(rel))?;
            (Some(at), Some(rel), t)
        }
        Variant::InnocentStall => {
            let rel = rng.gen_range(1_000_000..4_000_000);
            let t = eng.send_message_with(conn, bytes, false)?;
            eng.release_sender_at(t, SimTime(rel))?;
            (None, Some(rel), t)
        }
    };
    eng.run_until(SimTime::from_secs(1))?;
    let c = eng.connection(conn);
    let count = |e: LogEvent| eng.log().iter().filter(|l| l.event == e).count();
    let (cts_ok, cts_fail) = (count(LogEvent::CtsOk), count(LogEvent::CtsFail));
    let first = c.switches.first();
    let intact = eng.verify(t).ok();
    let first_to_backup =
        |r: SwitchReason| first.is_some_and(|s| s.reason == r && s.to == QpRole::Backup);
    let pass = intact
        && match variant {
            Variant::SenderRetry => first_to_backup(SwitchReason::SenderRetryExceeded),
            Variant::ReceiverProbe => first_to_backup(SwitchReason::ProbeFailed) && cts_fail >= 1,
            Variant::InnocentStall => c.switches.is_empty() && cts_ok >= 1 && cts_fail == 0,
        };
    Ok(TriggerRun {
        variant,
        run,
        bytes,
        fault_ns: fault,
        release_ns: release,
        first_switch: first.map(|s| s.reason),
        switches: c.switches.len(),
        cts_ok,
        cts_fail,
        intact,
        pass,
    })
}

pub fn trigger_discrimination(params: &ScenarioParams) -> Result<TriggerReport, HarnessError> {
    let n = params.trials.unwrap_or(RUNS);
    let mut runs = Vec::new();
    for v in [
        Variant::SenderRetry,
        Variant::ReceiverProbe,
        Variant::InnocentStall,
    ] {
        for i in 0..n {
            runs.push(one(v, params.seed, i)?);
        }
    }
    let passed = |v: Variant| runs.iter().filter(|r| r.variant == v && r.pass).count() as u32;
    Ok(TriggerReport {
        runs_per_variant: n,
        sender_retry_pass: passed(Variant::SenderRetry),
        receiver_probe_pass: passed(Variant::ReceiverProbe),
        innocent_stall_pass: passed(Variant::InnocentStall),
        runs,
    })
}

pub(super) fn run(params: &ScenarioParams) -> Result<Outcome, HarnessError> {
    let r = trigger_discrimination(params)?;
    let mut summary = RunSummary::new("trigger-discrimination", params.seed);
    summary.integrity = Some(r.runs.iter().all(|x| x.intact));
    if !r.all_pass() {
        summary.status = RunStatus::Aborted {
            reason: "a trigger variant misfired".into(),
        };
    }
    summary.metrics = serde_json::to_value(&r).expect("plain data");
    let mut csv = String::from(
        "variant,run,bytes,fault_ns,release_ns,first_switch,switches,cts_ok,cts_fail,intact,pass\n",
    );
    let opt = |v: Option<u64>| v.map_or(String::new(), |x| x.to_string());
    for x in &r.runs {
        let v = serde_json::to_value(x.variant).expect("plain data");
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            v.as_str().unwrap_or(""),
            x.run,
            x.bytes,
            opt(x.fault_ns),
            opt(x.release_ns),
            x.first_switch.map_or(String::new(), |s| format!("{s:?}")),
            x.switches,
            x.cts_ok,
            x.cts_fail,
            x.intact,
            x.pass
        ));
    }
    Ok(Outcome {
        summary,
        files: vec![OutputFile::new("runs.csv", csv)],
    })
}
