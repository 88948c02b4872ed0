use cclsim::collectives::{
    CollectiveOp, CollectiveStatus, CommGroup, Communicator, FlipPolicy, RingMode,
};
use cclsim::monitor::{sample_series, stats};
use cclsim::netsim::{ClosConfig, HostId, PortState, Topology};
use cclsim::time::SimTime;
use cclsim::transport::{TransferStatus, TransportConfig, TransportEngine};
use cclsim::verbs::QpRole;

fn pair(gbps: f64) -> Topology {
    Topology::clos(&ClosConfig {
        hosts: 2,
        gpus_per_host: 1,
        nics_per_host: 2,
        nic_gbps: gbps,
        ..ClosConfig::default()
    })
    .unwrap()
}

fn fast_retry() -> TransportConfig {
    TransportConfig {
        timeout_exponent: 4,
        retry_count: 1,
        chunk_size: 1 << 20,
        ..TransportConfig::default()
    }
}

#[test]
fn transfer_survives_a_port_flap() {
    let topo = pair(100.0);
    let (a, b) = (topo.gpu(HostId(0), 0), topo.gpu(HostId(1), 0));
    let port = topo.parse_port("h0.nic0").unwrap();
    let mut eng = TransportEngine::new(topo, fast_retry()).unwrap();
    let c = eng.open_connection(a, b).unwrap();
    let t = eng.send_message(c, 32 << 20).unwrap();
    eng.schedule_fault(SimTime::from_micros(300), port, PortState::Down)
        .unwrap();
    eng.schedule_fault(SimTime::from_micros(900), port, PortState::Up)
        .unwrap();
    eng.run_until(SimTime::from_secs_f64(1.0)).unwrap();
    assert_eq!(eng.transfer(t).status, TransferStatus::Completed);
    assert!(eng.verify(t).ok());
    let sw = &eng.connection(c).switches;
    assert_eq!(sw.first().map(|s| s.to), Some(QpRole::Backup));
}

#[test]
fn steady_stream_samples_near_capacity() {
    let topo = pair(100.0);
    let (a, b) = (topo.gpu(HostId(0), 0), topo.gpu(HostId(1), 0));
    let cfg = TransportConfig {
        chunk_size: 4 << 20,
        ..fast_retry()
    };
    let mut eng = TransportEngine::new(topo, cfg).unwrap();
    let c = eng.open_connection(a, b).unwrap();
    let limit = SimTime::from_secs_f64(1.0);
    for _ in 0..100 {
        let t = eng.send_message(c, 4 << 20).unwrap();
        while eng.transfer(t).status == TransferStatus::InProgress {
            eng.step(limit).unwrap().expect("events pending");
        }
    }
    let s = sample_series(&eng.connection(c).messages, 8).unwrap();
    let st = stats(&s).unwrap();
    let cap = 100e9 / 8.0;
    assert!((st.mean - cap).abs() < 0.05 * cap, "{st:?}");
}

#[test]
fn allreduce_on_eight_ranks_is_correct() {
    let topo = Topology::clos(&ClosConfig {
        hosts: 2,
        gpus_per_host: 4,
        nics_per_host: 4,
        ..ClosConfig::default()
    })
    .unwrap();
    let ranks: Vec<_> = topo.hosts.iter().flat_map(|h| h.gpus.clone()).collect();
    let g = CommGroup::new(&topo, ranks, RingMode::TopologyAware, FlipPolicy::Odd, 2, 2).unwrap();
    let mut eng = TransportEngine::new(topo, TransportConfig::default()).unwrap();
    let r = Communicator::new(g)
        .run(
            &mut eng,
            CollectiveOp::AllReduce { nbytes: 16 << 20 },
            SimTime::from_secs_f64(10.0),
        )
        .unwrap();
    assert_eq!(r.status, CollectiveStatus::Completed);
    assert!(r.correct);
    assert_eq!(r.spine_bytes, 0);
}
