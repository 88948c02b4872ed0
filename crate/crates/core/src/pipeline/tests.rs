use proptest::prelude::*;

use super::*;
use crate::time::SimTime;

const MS: u64 = 1_000_000;

#[test]
fn gemm_slows_linearly_with_reservations() {
    let base = SimTime::from_millis(10);
    let mut pool = SmPool::new(132);
    assert_eq!(gemm_duration(base, &pool).unwrap(), base);
    pool.reserve(1, 0.25).unwrap();
    assert_eq!(gemm_duration(base, &pool).unwrap(), SimTime(13_333_333));
    assert_eq!(pool.reserved_sms(), 33);
    pool.reserve(2, 0.75).unwrap();
    assert_eq!(
        gemm_duration(base, &pool),
        Err(PipelineError::NoSmAvailable)
    );
    assert!(matches!(
        pool.reserve(3, 0.1),
        Err(PipelineError::Oversubscribed(_))
    ));
    pool.release(2);
    assert!((pool.available() - 0.75).abs() < 1e-12);
}

fn ev(i: usize) -> EventId {
    EventId(i)
}

#[test]
fn host_functions_gate_the_comm_stream() {
    let ms = SimTime::from_millis;
    let mut compute = Stream::new(0, StreamKind::Compute);
    compute
        .push(StreamOp::gemm(ms(3)))
        .push(StreamOp::record(ev(0)))
        .push(StreamOp::gemm(ms(1)));
    let mut comm = Stream::new(1, StreamKind::Communication);
    comm.push(StreamOp::host_wait(ev(0), SimTime::ZERO))
        .push(StreamOp::send_offloaded(ms(2), ev(1)))
        .push(StreamOp::barrier(ev(1), SimTime::ZERO))
        .push(StreamOp::send(ms(1)));
    let streams = [compute, comm];
    let t = enforce_order(&streams).unwrap();
    t.verify(&streams).unwrap();
    let at = |s: usize, i: usize| {
        t.entries
            .iter()
            .find(|e| e.stream == s && e.index == i)
            .unwrap()
    };
    assert_eq!(at(1, 1).start, ms(3));
    assert_eq!(at(1, 1).end, ms(5));
    assert_eq!(at(1, 3).start, ms(5));
    // compute keeps going while the transfer is in flight
    assert_eq!(at(0, 2).start, ms(3));
    assert_eq!(t.makespan(), ms(6));
}

#[test]
fn independent_streams_overlap() {
    let mut a = Stream::new(0, StreamKind::Compute);
    a.push(StreamOp::gemm(SimTime(5)));
    let mut b = Stream::new(1, StreamKind::Communication);
    b.push(StreamOp::send(SimTime(5)));
    let t = enforce_order(&[a, b]).unwrap();
    assert!(t.entries.iter().all(|e| e.start == SimTime::ZERO));
    assert_eq!(t.makespan(), SimTime(5));
}

#[test]
fn unrecorded_event_is_reported() {
    let mut a = Stream::new(0, StreamKind::Compute);
    a.push(StreamOp::wait(ev(7)))
        .push(StreamOp::gemm(SimTime(1)));
    assert!(matches!(
        enforce_order(&[a]),
        Err(PipelineError::DependencyCycle(_))
    ));

    // two streams waiting on each other
    let mut a = Stream::new(0, StreamKind::Compute);
    a.push(StreamOp::wait(ev(1))).push(StreamOp::record(ev(0)));
    let mut b = Stream::new(1, StreamKind::Compute);
    b.push(StreamOp::wait(ev(0))).push(StreamOp::record(ev(1)));
    assert!(matches!(
        enforce_order(&[a, b]),
        Err(PipelineError::DependencyCycle(_))
    ));
}

#[test]
fn double_record_is_rejected() {
    let mut a = Stream::new(0, StreamKind::Compute);
    a.push(StreamOp::record(ev(0)))
        .push(StreamOp::record(ev(0)));
    assert!(matches!(
        enforce_order(&[a]),
        Err(PipelineError::InvalidConfig(_))
    ));
}

#[test]
fn verify_catches_tampered_traces() {
    let mut a = Stream::new(0, StreamKind::Compute);
    a.push(StreamOp::gemm(SimTime(4)))
        .push(StreamOp::record(ev(0)));
    let mut b = Stream::new(1, StreamKind::Communication);
    b.push(StreamOp::wait(ev(0)))
        .push(StreamOp::send(SimTime(1)));
    let streams = [a, b];
    let mut t = enforce_order(&streams).unwrap();
    let i = t
        .entries
        .iter()
        .position(|e| e.stream == 1 && e.index == 0)
        .unwrap();
    t.entries[i].start = SimTime(1);
    assert!(matches!(
        t.verify(&streams),
        Err(PipelineError::OrderViolation(_))
    ));
}

#[test]
fn one_f_one_b_order_shape() {
    use Phase::*;
    assert_eq!(
        one_f_one_b_order(0, 2, 2),
        vec![(Forward, 0), (Forward, 1), (Backward, 0), (Backward, 1)]
    );
    assert_eq!(
        one_f_one_b_order(1, 2, 2),
        vec![(Forward, 0), (Backward, 0), (Forward, 1), (Backward, 1)]
    );
    for w in 0..4 {
        let o = one_f_one_b_order(w, 4, 8);
        assert_eq!(o.len(), 16);
        assert!(o[..(3 - w) as usize].iter().all(|p| p.0 == Forward));
    }
    // fewer microbatches than stages
    assert_eq!(one_f_one_b_order(0, 4, 2).len(), 4);
}

fn units(workers: u32, microbatches: u32, p2p_ms: f64, mode: P2pMode) -> PipelineConfig {
    PipelineConfig {
        workers,
        microbatches,
        fwd_ns: MS,
        bwd_ns: MS,
        p2p_ns: Some((p2p_ms * MS as f64) as u64),
        p2p_mode: mode,
        p2p_sm_fraction: 0.0,
        ..PipelineConfig::default()
    }
}

#[test]
fn single_worker_has_no_communication() {
    for mode in [P2pMode::KernelBased, P2pMode::Offloaded] {
        let mut c = units(1, 5, 0.0, mode);
        c.p2p_ns = None;
        c.bwd_ns = 2 * MS;
        let r = run_1f1b(&c).unwrap();
        assert_eq!(r.makespan, SimTime(5 * 3 * MS));
        assert_eq!(r.bubble, SimTime::ZERO);
    }
}

#[test]
fn two_stage_hand_oracle() {
    // offloaded: w1 finishes B1 at 5.5, grad lands at 6, w0 runs B1 to 7.
    // kernel-based: every send sits on the compute stream, w0 ends at 7.5.
    let off = run_1f1b(&units(2, 2, 0.5, P2pMode::Offloaded)).unwrap();
    let ker = run_1f1b(&units(2, 2, 0.5, P2pMode::KernelBased)).unwrap();
    assert_eq!(off.makespan, SimTime(7 * MS));
    assert_eq!(ker.makespan, SimTime(7 * MS + MS / 2));
    assert_eq!(off.critical_worker, 0);
    assert_eq!(off.bubble, SimTime(3 * MS));
    let span = |r: &PipelineResult, w, k: &str, i| {
        let e = r
            .timeline
            .iter()
            .find(|e| e.worker == w && e.op_kind == k && e.microbatch == i)
            .unwrap();
        (e.start.0 as f64 / MS as f64, e.end.0 as f64 / MS as f64)
    };
    assert_eq!(span(&off, 1, "forward", 1), (3.5, 4.5));
    assert_eq!(span(&ker, 1, "forward", 1), (4.0, 5.0));
    assert_eq!(span(&ker, 0, "backward", 1), (6.5, 7.5));
}

#[test]
fn offloaded_wins_on_four_by_eight_sweep() {
    for p in [0.05, 0.25, 0.5, 1.0, 2.0, 5.0] {
        let off = run_1f1b(&units(4, 8, p, P2pMode::Offloaded)).unwrap();
        let ker = run_1f1b(&units(4, 8, p, P2pMode::KernelBased)).unwrap();
        assert!(
            off.makespan < ker.makespan,
            "p2p {p}: {} vs {}",
            off.makespan,
            ker.makespan
        );
    }
}

#[test]
fn zero_p2p_bytes_makes_modes_identical() {
    let base = PipelineConfig {
        p2p_bytes: 0,
        ..PipelineConfig::default()
    };
    let a = run_1f1b(&base.with_mode(P2pMode::Offloaded)).unwrap();
    let b = run_1f1b(&base.with_mode(P2pMode::KernelBased)).unwrap();
    assert_eq!(a.p2p_time, SimTime::ZERO);
    assert_eq!(a.makespan, b.makespan);
    assert_eq!(
        training_throughput_proxy(&a, 1e12),
        training_throughput_proxy(&b, 1e12)
    );
}

#[test]
fn transport_timed_p2p_favors_offload() {
    let cfg = PipelineConfig::default();
    let off = run_1f1b(&cfg.with_mode(P2pMode::Offloaded)).unwrap();
    let ker = run_1f1b(&cfg.with_mode(P2pMode::KernelBased)).unwrap();
    assert!(off.p2p_time < ker.p2p_time);
    // 64 MiB at 400 Gb/s is about 1.34 ms on the wire
    let wire = (64u64 << 20) as f64 * 8.0 / 400e9;
    assert!((off.p2p_time.as_secs_f64() - wire).abs() / wire < 0.01);
    let ratio = training_throughput_proxy(&off, 1.0) / training_throughput_proxy(&ker, 1.0);
    assert!(ratio > 1.0, "{ratio}");
    assert!(ker.p2p_sm_seconds > 0.0);
    assert_eq!(off.p2p_sm_seconds, 0.0);
}

#[test]
fn both_modes_run_the_same_dag() {
    let off = run_1f1b(&units(4, 8, 0.7, P2pMode::Offloaded)).unwrap();
    let ker = run_1f1b(&units(4, 8, 0.7, P2pMode::KernelBased)).unwrap();
    assert_eq!(off.data_ops(), ker.data_ops());
    assert_eq!(off.data_ops().len(), 4 * 8 * 2 + 3 * 8 * 2);
    off.check_dependencies().unwrap();
    ker.check_dependencies().unwrap();
}

#[test]
fn timeline_csv_has_one_row_per_op() {
    let r = run_1f1b(&units(2, 2, 0.5, P2pMode::Offloaded)).unwrap();
    let csv = r.timeline_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("worker,op_kind,microbatch,start_ns,end_ns")
    );
    assert_eq!(lines.count(), r.timeline.len());
    assert!(csv.contains("0,forward,0,0,1000000"));
}

#[test]
fn invalid_configs_are_rejected() {
    let ok = PipelineConfig::default();
    for bad in [
        PipelineConfig {
            workers: 0,
            ..ok.clone()
        },
        PipelineConfig {
            microbatches: 0,
            ..ok.clone()
        },
        PipelineConfig {
            fwd_ns: 0,
            ..ok.clone()
        },
        PipelineConfig {
            p2p_sm_fraction: 1.0,
            ..ok.clone()
        },
    ] {
        assert!(matches!(
            run_1f1b(&bad),
            Err(PipelineError::InvalidConfig(_))
        ));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn offload_never_loses_and_order_holds(
        workers in 1u32..6,
        micro in 1u32..10,
        fwd in 1u64..50,
        bwd in 1u64..50,
        p2p in 0u64..60,
        host in 0u64..3,
    ) {
        let mk = |mode| PipelineConfig {
            workers,
            microbatches: micro,
            fwd_ns: fwd * 1000,
            bwd_ns: bwd * 1000,
            p2p_ns: Some(p2p * 1000),
            host_func_ns: if mode == P2pMode::Offloaded { host } else { 0 },
            p2p_mode: mode,
            ..PipelineConfig::default()
        };
        let off = run_1f1b(&mk(P2pMode::Offloaded)).unwrap();
        let ker = run_1f1b(&mk(P2pMode::KernelBased)).unwrap();
        if host == 0 {
            prop_assert!(off.makespan <= ker.makespan);
        }
        for r in [&off, &ker] {
            r.trace.verify(&r.streams).unwrap();
            r.check_dependencies().unwrap();
            for (w, &k) in r.max_in_flight.iter().enumerate() {
                prop_assert!(k <= workers - w as u32);
            }
        }
        prop_assert_eq!(off.data_ops(), ker.data_ops());
    }
}
