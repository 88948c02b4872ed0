use proptest::prelude::*;

use super::*;
use crate::netsim::{
    ClosConfig, FaultEntry, FaultScript, GpuId, HostId, NicPortId, PortState, Topology,
};
use crate::time::SimTime;
use crate::verbs::{retry_timeout, QpRole};
use crate::SimError;

const MIB: u64 = 1 << 20;
const GIB: u64 = 1 << 30;

fn topo(nic_gbps: f64) -> Topology {
    Topology::clos(&ClosConfig {
        hosts: 2,
        gpus_per_host: 2,
        nics_per_host: 2,
        leaves: 2,
        spines: 2,
        nic_gbps,
        ..ClosConfig::default()
    })
    .unwrap()
}

fn fast_retry(cfg: TransportConfig) -> TransportConfig {
    TransportConfig {
        timeout_exponent: 4,
        retry_count: 1,
        ..cfg
    }
}

struct Rig {
    eng: TransportEngine,
    conn: ConnId,
}

impl Rig {
    fn new(cfg: TransportConfig, nic_gbps: f64) -> Rig {
        let t = topo(nic_gbps);
        let (src, dst) = (t.gpu(HostId(0), 0), t.gpu(HostId(1), 0));
        let mut eng = TransportEngine::new(t, cfg).unwrap();
        let conn = eng.open_connection(src, dst).unwrap();
        Rig { eng, conn }
    }

    fn src_port(&self, role: QpRole) -> NicPortId {
        self.eng
            .connection(self.conn)
            .pair(role)
            .unwrap()
            .src_port
            .unwrap()
    }

    fn run(&mut self, secs: f64) {
        self.eng.run_until(SimTime::from_secs_f64(secs)).unwrap();
    }
}

fn tx_time(bytes: u64, gbps: f64) -> f64 {
    bytes as f64 * 8.0 / (gbps * 1e9)
}

#[test]
fn one_gib_in_four_mib_chunks() {
    let mut r = Rig::new(TransportConfig::default(), 400.0);
    let t = r.eng.send_message(r.conn, GIB).unwrap();
    r.run(1.0);
    let x = r.eng.transfer(t);
    assert_eq!(x.total_chunks(), 256);
    assert_eq!(
        (x.sender.posted, x.sender.transmitted, x.sender.acked),
        (256, 256, 256)
    );
    assert_eq!(x.receiver.done, 256);
    assert_eq!(x.status, TransferStatus::Completed);
    assert!(r.eng.verify(t).ok());
    assert!(r.eng.connection(r.conn).switches.is_empty());
}

#[test]
fn zero_length_rejected() {
    let mut r = Rig::new(TransportConfig::default(), 400.0);
    assert_eq!(
        r.eng.send_message(r.conn, 0),
        Err(SimError::ZeroLengthMessage)
    );
}

#[test]
fn zero_copy_streams_at_line_rate() {
    let mut r = Rig::new(TransportConfig::default(), 400.0);
    let t = r.eng.send_message(r.conn, GIB).unwrap();
    r.run(1.0);
    let d = r.eng.topology().path(
        crate::netsim::Node::Nic(r.src_port(QpRole::Primary)),
        crate::netsim::Node::Nic(r.eng.connection(r.conn).primary.dst_port.unwrap()),
    );
    let d = d.unwrap().delay.as_secs_f64();
    // First CTS, 256 back-to-back chunks, last arrival, last ack.
    let oracle = 256.0 * tx_time(4 * MIB, 400.0) + 3.0 * d;
    let got = r.eng.transfer(t).duration().unwrap().as_secs_f64();
    assert!(
        got >= oracle - 1e-9 && got <= oracle + 256e-9,
        "got {got} oracle {oracle}"
    );
}

#[test]
fn staged_copy_matches_serial_cycle_and_loses_to_zero_copy() {
    let staged = TransportConfig {
        stage_costs: StageCosts::staged_calibrated(0.25, 400e9),
        ..TransportConfig::default()
    };
    let zero = TransportConfig {
        stage_costs: staged.stage_costs.in_mode(PipelineMode::ZeroCopy),
        ..staged.clone()
    };
    let mut a = Rig::new(staged, 400.0);
    let mut b = Rig::new(zero, 400.0);
    let ta = a.eng.send_message(a.conn, GIB).unwrap();
    let tb = b.eng.send_message(b.conn, GIB).unwrap();
    a.run(1.0);
    b.run(1.0);
    let sa = a.eng.transfer(ta).duration().unwrap().as_secs_f64();
    let sb = b.eng.transfer(tb).duration().unwrap().as_secs_f64();
    let tx = tx_time(4 * MIB, 400.0);
    // copy = tx / 3, and each chunk waits for the previous ack: copy + tx + 2d.
    let oracle = 256.0 * (tx / 3.0 + tx + 2.0 * 20e-9);
    assert!(
        (sa - oracle).abs() / oracle < 1e-3,
        "staged {sa} oracle {oracle}"
    );
    assert!(sb <= 0.8 * sa, "zero-copy {sb} staged {sa}");
    assert!(a.eng.verify(ta).ok() && b.eng.verify(tb).ok());
}

#[test]
fn sender_retry_exhaustion_moves_to_backup() {
    let mut r = Rig::new(fast_retry(TransportConfig::default()), 400.0);
    let rto = retry_timeout(4, 1);
    let port = r.src_port(QpRole::Primary);
    r.eng
        .schedule_fault(SimTime::from_millis(1), port, PortState::Down)
        .unwrap();
    let t = r.eng.send_message(r.conn, 256 * MIB).unwrap();
    r.run(1.0);
    let x = r.eng.transfer(t);
    assert_eq!(x.status, TransferStatus::Completed);
    assert!(r.eng.verify(t).ok());
    let c = r.eng.connection(r.conn);
    assert_eq!(c.switches.len(), 1);
    let sw = c.switches[0];
    assert_eq!(sw.to, QpRole::Backup);
    assert_eq!(sw.reason, SwitchReason::SenderRetryExceeded);
    // The stalled chunk's timer started at the fault; the request needs one
    // path delay to reach the receiver.
    let lag = sw.time - (SimTime::from_millis(1) + rto);
    assert!(lag <= SimTime::from_micros(1), "lag {lag}");
    // Retransmission suffix: epoch 1 carries exactly resume..total.
    let on_backup: Vec<u64> = x
        .transmissions
        .iter()
        .filter(|(e, _)| *e == 1)
        .map(|(_, k)| *k)
        .collect();
    assert_eq!(
        on_backup,
        (sw.resume_chunk..x.total_chunks()).collect::<Vec<_>>()
    );
    assert_eq!(c.active(), QpRole::Backup);
}

#[test]
fn restored_primary_is_taken_back_after_probe() {
    let cfg = TransportConfig {
        probe_period_ns: 500_000,
        ..fast_retry(TransportConfig::default())
    };
    let mut r = Rig::new(cfg, 400.0);
    let port = r.src_port(QpRole::Primary);
    r.eng
        .load_faults(&FaultScript::outage(
            port,
            SimTime::from_millis(1),
            Some(SimTime::from_millis(3)),
        ))
        .unwrap();
    let t = r.eng.send_message(r.conn, GIB).unwrap();
    r.run(1.0);
    assert!(r.eng.verify(t).ok());
    let c = r.eng.connection(r.conn);
    let to: Vec<QpRole> = c.switches.iter().map(|s| s.to).collect();
    assert_eq!(to, vec![QpRole::Backup, QpRole::Primary]);
    let back = c.switches[1].time;
    assert!(
        back > SimTime::from_millis(3) && back <= SimTime::from_micros(3500),
        "{back}"
    );
    assert_eq!(c.switches[1].reason, SwitchReason::PrimaryRestored);
}

/// Default retry parameters, a port down at 4 s and back at 19 s, probing
/// every 500 ms: the switch back lands in (19 s, 19.5 s].
#[test]
fn probe_schedule_with_default_timeouts() {
    let cfg = TransportConfig {
        chunk_size: 64 * MIB,
        chunk_log: false,
        ..TransportConfig::default()
    };
    let mut r = Rig::new(cfg, 10.0);
    let port = r.src_port(QpRole::Primary);
    r.eng
        .load_faults(&FaultScript::outage(
            port,
            SimTime::from_secs(4),
            Some(SimTime::from_secs(19)),
        ))
        .unwrap();
    let t = r.eng.send_message(r.conn, 40 * GIB).unwrap();
    r.run(60.0);
    assert!(r.eng.verify(t).ok());
    let c = r.eng.connection(r.conn);
    assert_eq!(c.switches.len(), 2);
    let down = c.switches[0].time.as_secs_f64();
    assert!((down - (4.0 + 8.589934592)).abs() < 1e-3, "{down}");
    let up = c.switches[1].time;
    assert!(
        up > SimTime::from_secs(19) && up <= SimTime::from_millis(19_500),
        "{up}"
    );
}

#[test]
fn innocent_stall_probes_but_never_switches() {
    let mut r = Rig::new(fast_retry(TransportConfig::default()), 400.0);
    let delta = r.eng.delta();
    let t = r.eng.send_message_with(r.conn, 64 * MIB, false).unwrap();
    r.eng.release_sender_at(t, SimTime::from_millis(2)).unwrap();
    r.run(1.0);
    assert!(r.eng.verify(t).ok());
    assert!(r.eng.connection(r.conn).switches.is_empty());
    let probes: Vec<SimTime> = r
        .eng
        .log()
        .iter()
        .filter(|l| l.event == LogEvent::CtsProbe)
        .map(|l| l.time)
        .collect();
    let oks = r
        .eng
        .log()
        .iter()
        .filter(|l| l.event == LogEvent::CtsOk)
        .count();
    assert!(probes.len() >= 2);
    assert_eq!(oks, probes.len());
    // The first check fires one tick past the threshold.
    assert_eq!(probes[0], delta + SimTime(1));
}

#[test]
fn receiver_probe_detects_dead_link_while_sender_idle() {
    let mut r = Rig::new(fast_retry(TransportConfig::default()), 400.0);
    let delta = r.eng.delta();
    let rto = retry_timeout(4, 1);
    let dst = r.eng.connection(r.conn).primary.dst_port.unwrap();
    r.eng
        .schedule_fault(SimTime::from_micros(10), dst, PortState::Down)
        .unwrap();
    let t = r.eng.send_message_with(r.conn, 64 * MIB, false).unwrap();
    r.eng.release_sender_at(t, SimTime::from_millis(2)).unwrap();
    r.run(1.0);
    let c = r.eng.connection(r.conn);
    assert_eq!(c.switches.len(), 1);
    assert_eq!(c.switches[0].reason, SwitchReason::ProbeFailed);
    assert_eq!(c.switches[0].time, delta + SimTime(1) + rto);
    assert!(r.eng.log().iter().any(|l| l.event == LogEvent::CtsFail));
    assert!(r.eng.verify(t).ok());
}

#[test]
fn both_ports_down_fails_the_connection() {
    let mut r = Rig::new(fast_retry(TransportConfig::default()), 400.0);
    for role in [QpRole::Primary, QpRole::Backup] {
        let p = r.src_port(role);
        r.eng
            .schedule_fault(SimTime::from_millis(1), p, PortState::Down)
            .unwrap();
    }
    let t = r.eng.send_message(r.conn, 256 * MIB).unwrap();
    r.run(1.0);
    assert_eq!(r.eng.transfer(t).status, TransferStatus::Failed);
    assert!(r.eng.connection(r.conn).failed);
    let ev = r.eng.take_events();
    assert!(ev
        .iter()
        .any(|e| matches!(e, TransportEvent::ConnectionFailed { .. })));
    assert_eq!(
        r.eng.send_message(r.conn, 1),
        Err(SimError::ConnectionFailed(r.conn.0))
    );
}

#[test]
fn without_failover_a_port_fault_is_fatal() {
    let cfg = TransportConfig {
        failover: false,
        ..fast_retry(TransportConfig::default())
    };
    let mut r = Rig::new(cfg, 400.0);
    let p = r.src_port(QpRole::Primary);
    r.eng
        .schedule_fault(SimTime::from_millis(1), p, PortState::Down)
        .unwrap();
    let t = r.eng.send_message(r.conn, 256 * MIB).unwrap();
    r.run(1.0);
    assert_eq!(r.eng.transfer(t).status, TransferStatus::Failed);
    assert!(r.eng.connection(r.conn).switches.is_empty());
}

#[test]
fn queued_messages_run_back_to_back() {
    let mut r = Rig::new(TransportConfig::default(), 400.0);
    let ids: Vec<TransferId> = (0..3)
        .map(|i| r.eng.send_message(r.conn, (i + 1) * 10 * MIB + 5).unwrap())
        .collect();
    r.run(1.0);
    let mut last = SimTime::ZERO;
    for id in ids {
        let x = r.eng.transfer(id);
        assert!(r.eng.verify(id).ok());
        assert!(x.completed_at.unwrap() >= last);
        last = x.completed_at.unwrap();
    }
}

#[test]
fn event_log_and_trace_replay_identically() {
    let run = || {
        let mut r = Rig::new(fast_retry(TransportConfig::default()), 400.0);
        let p = r.src_port(QpRole::Primary);
        r.eng
            .load_faults(&FaultScript::outage(
                p,
                SimTime::from_millis(1),
                Some(SimTime::from_millis(2)),
            ))
            .unwrap();
        r.eng.send_message(r.conn, 128 * MIB).unwrap();
        r.run(1.0);
        (r.eng.log_csv(), r.eng.trace().digest())
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.0.starts_with("time_ns,conn_id,role,event,chunk_index\n"));
}

#[test]
fn nvlink_connection_has_no_backup() {
    let t = topo(400.0);
    let mut eng = TransportEngine::new(t, TransportConfig::default()).unwrap();
    let c = eng.open_connection(GpuId(0), GpuId(1)).unwrap();
    assert!(eng.connection(c).backup.is_none());
    let x = eng.send_message(c, 100 * MIB).unwrap();
    eng.run_until(SimTime::from_secs(1)).unwrap();
    assert!(eng.verify(x).ok());
}

#[test]
fn config_validation() {
    let bad = TransportConfig {
        qp_number: 3,
        ..TransportConfig::default()
    };
    assert!(matches!(
        TransportEngine::new(topo(400.0), bad),
        Err(SimError::InvalidConfig(_))
    ));
}

fn outage(port: NicPortId, a: u64, b: u64) -> Vec<FaultEntry> {
    vec![
        FaultEntry {
            at: SimTime::from_micros(a),
            port,
            state: PortState::Down,
        },
        FaultEntry {
            at: SimTime::from_micros(b),
            port,
            state: PortState::Up,
        },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Outages on the two ports: disjoint windows always complete intact;
    /// overlapping ones either complete intact or fail the connection.
    #[test]
    fn random_outages_keep_delivery_exact(
        a0 in 0u64..3000, al in 1u64..2000,
        b0 in 0u64..3000, bl in 1u64..2000,
        on_dst in any::<bool>(),
        chunk_kib in prop::sample::select(vec![256u64, 1024, 4096]),
    ) {
        let cfg = TransportConfig {
            chunk_size: chunk_kib << 10,
            probe_period_ns: 200_000,
            ..fast_retry(TransportConfig::default())
        };
        let mut r = Rig::new(cfg, 100.0);
        let c = r.eng.connection(r.conn);
        let (p, b) = if on_dst {
            (c.primary.dst_port.unwrap(), c.backup.unwrap().dst_port.unwrap())
        } else {
            (c.primary.src_port.unwrap(), c.backup.unwrap().src_port.unwrap())
        };
        let mut entries = outage(p, a0, a0 + al);
        entries.extend(outage(b, b0, b0 + bl));
        entries.sort_by_key(|e| e.at);
        r.eng.load_faults(&FaultScript::new(entries)).unwrap();
        let t = r.eng.send_message(r.conn, 64 * MIB).unwrap();
        r.eng.run_until(SimTime::from_secs(1)).unwrap();
        let overlap = a0 < b0 + bl && b0 < a0 + al;
        let x = r.eng.transfer(t);
        match x.status {
            TransferStatus::Completed => prop_assert!(r.eng.verify(t).ok()),
            TransferStatus::Failed => prop_assert!(overlap, "failed without overlapping outages"),
            TransferStatus::InProgress => prop_assert!(false, "stuck: {:?} {:?}", x.sender, x.receiver),
        }
        prop_assert!(x.receiver.done >= x.sender.acked);
    }
}

#[test]
fn recording_messages_leaves_transport_untouched() {
    let run = |record: bool| {
        let cfg = TransportConfig {
            record_messages: record,
            ..fast_retry(TransportConfig::default())
        };
        let mut r = Rig::new(cfg, 400.0);
        let p = r.src_port(QpRole::Primary);
        r.eng
            .schedule_fault(SimTime::from_micros(300), p, PortState::Down)
            .unwrap();
        r.eng.send_message(r.conn, 64 * MIB).unwrap();
        r.run(1.0);
        let n = r.eng.connection(r.conn).messages.len();
        (r.eng.log_csv(), r.eng.trace().digest(), n)
    };
    let (on, off) = (run(true), run(false));
    assert_eq!((&on.0, &on.1), (&off.0, &off.1));
    assert!(on.2 > 0 && off.2 == 0);
}

fn overlapping_outages(window_ns: u64) -> (Rig, TransferId) {
    let cfg = TransportConfig {
        chunk_size: MIB,
        probe_period_ns: 200_000,
        reconnect_window_ns: window_ns,
        ..fast_retry(TransportConfig::default())
    };
    let mut r = Rig::new(cfg, 100.0);
    let (p, b) = (r.src_port(QpRole::Primary), r.src_port(QpRole::Backup));
    let ms = SimTime::from_micros;
    r.eng
        .load_faults(&FaultScript::outage(p, ms(1000), Some(ms(2000))))
        .unwrap();
    r.eng
        .load_faults(&FaultScript::outage(b, ms(1500), Some(ms(1900))))
        .unwrap();
    let t = r.eng.send_message(r.conn, 40 * MIB).unwrap();
    r.run(1.0);
    (r, t)
}

#[test]
fn reconnect_window_rides_out_a_double_outage() {
    let (r, t) = overlapping_outages(50_000_000);
    assert_eq!(r.eng.transfer(t).status, TransferStatus::Completed);
    assert!(r.eng.verify(t).ok());
    let c = r.eng.connection(r.conn);
    assert!(!c.failed);
    assert!(c
        .switches
        .iter()
        .any(|s| s.reason == SwitchReason::NoticeFailed));
}

#[test]
fn double_outage_without_window_fails_cleanly() {
    let (r, t) = overlapping_outages(0);
    let x = r.eng.transfer(t);
    assert_eq!(x.status, TransferStatus::Failed);
    assert!(x.delivery.iter().enumerate().all(|(i, &k)| i as u64 == k));
}

#[test]
fn reconnect_window_still_gives_up_on_permanent_loss() {
    let cfg = TransportConfig {
        reconnect_window_ns: 2_000_000,
        ..fast_retry(TransportConfig::default())
    };
    let mut r = Rig::new(cfg, 400.0);
    for role in [QpRole::Primary, QpRole::Backup] {
        let p = r.src_port(role);
        r.eng
            .schedule_fault(SimTime::from_millis(1), p, PortState::Down)
            .unwrap();
    }
    let t = r.eng.send_message(r.conn, 256 * MIB).unwrap();
    r.run(1.0);
    assert_eq!(r.eng.transfer(t).status, TransferStatus::Failed);
    assert!(r.eng.connection(r.conn).failed);
    let at = r.eng.take_events().iter().find_map(|e| match e {
        TransportEvent::ConnectionFailed { at, .. } => Some(*at),
        _ => None,
    });
    // gives up once the window is spent, not before
    let at = at.unwrap();
    assert!(
        at >= SimTime::from_millis(3) && at < SimTime::from_millis(4),
        "{at}"
    );
}
