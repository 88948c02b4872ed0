use proptest::prelude::*;

use super::*;
use crate::netsim::{ClosConfig, HostId, PortState, SwitchId, Topology};
use crate::transport::{TransportConfig, TransportEngine};

const MIB: u64 = 1 << 20;
const GIB: u64 = 1 << 30;

fn clos(hosts: usize, gpus: usize, nics: usize, leaves: usize, spines: usize) -> Topology {
    Topology::clos(&ClosConfig {
        hosts,
        gpus_per_host: gpus,
        nics_per_host: nics,
        leaves,
        spines,
        ..ClosConfig::default()
    })
    .unwrap()
}

fn engine(t: Topology) -> TransportEngine {
    TransportEngine::new(t, TransportConfig::default()).unwrap()
}

fn group(t: &Topology, mode: RingMode) -> CommGroup {
    let hosts: Vec<HostId> = (0..t.hosts.len()).map(HostId).collect();
    CommGroup::from_hosts(t, &hosts, mode, 1).unwrap()
}

fn inter_server_edges<'a>(
    t: &'a Topology,
    g: &'a CommGroup,
) -> impl Iterator<Item = &'a RingEdge> + 'a {
    g.channels[0].edges.iter().filter(move |e| {
        t.host_of_gpu(g.ranks[e.from]).unwrap() != t.host_of_gpu(g.ranks[e.to]).unwrap()
    })
}

#[test]
fn default_ring_crosses_the_spine_topology_aware_does_not() {
    let t = clos(2, 2, 2, 2, 2);
    let d = group(&t, RingMode::Default);
    let a = group(&t, RingMode::TopologyAware);
    let s0g1 = t.gpu(HostId(0), 1);
    let find = |g: &CommGroup| {
        let e = g.channels[0]
            .edges
            .iter()
            .find(|e| g.ranks[e.from] == s0g1)
            .unwrap();
        (g.ranks[e.to], e.hop_count)
    };
    assert_eq!(find(&d), (t.gpu(HostId(1), 0), 3));
    assert_eq!(find(&a), (t.gpu(HostId(1), 1), 1));
    assert!(inter_server_edges(&t, &d).any(|e| e.hop_count == 3));
}

#[test]
fn single_server_ring_is_intra_host() {
    let t = clos(1, 4, 4, 4, 1);
    let g = group(&t, RingMode::TopologyAware);
    assert!(g.channels[0].is_hamiltonian(4));
    assert!(g.channels[0].edges.iter().all(|e| e.hop_count == 0));
}

#[test]
fn four_by_eight_topology_aware_edges_are_same_index() {
    let t = clos(4, 8, 8, 8, 4);
    let g = group(&t, RingMode::TopologyAware);
    assert!(g.channels[0].is_hamiltonian(32));
    let mut n = 0;
    for e in inter_server_edges(&t, &g) {
        n += 1;
        assert_eq!(
            t.gpu_local_index(g.ranks[e.from]),
            t.gpu_local_index(g.ranks[e.to])
        );
        assert_eq!(e.hop_count, 1);
    }
    assert_eq!(n, 4);
}

#[test]
fn ring_rejects_duplicates_and_empties() {
    let t = clos(2, 2, 2, 2, 2);
    let g = t.gpu(HostId(0), 0);
    assert_eq!(
        build_ring(&t, &[g, g], RingMode::Default, FlipPolicy::Odd),
        Err(CollectiveError::DuplicateRank(g))
    );
    assert!(matches!(
        build_ring(&t, &[], RingMode::Default, FlipPolicy::Odd),
        Err(CollectiveError::GroupTooSmall { .. })
    ));
}

fn hf(v: &[(usize, usize)]) -> Hostfile {
    Hostfile {
        entries: v.iter().map(|&(h, t)| (HostId(h), SwitchId(t))).collect(),
    }
}

#[test]
fn hostfile_sort_examples() {
    let sorted = sort_hostfile(&hf(&[(1, 2), (2, 1), (3, 2), (4, 1)]));
    assert_eq!(
        sorted.hosts(),
        vec![HostId(1), HostId(3), HostId(2), HostId(4)]
    );
    let grouped = hf(&[(1, 1), (2, 1), (3, 2)]);
    assert_eq!(sort_hostfile(&grouped), grouped);
    let same = hf(&[(3, 0), (1, 0), (2, 0)]);
    assert_eq!(sort_hostfile(&same), same);
}

proptest! {
    #[test]
    fn hostfile_sort_is_an_idempotent_permutation(tors in proptest::collection::vec(0usize..4, 0..20)) {
        let h = hf(&tors.iter().enumerate().map(|(i, &t)| (i, t)).collect::<Vec<_>>());
        let s = sort_hostfile(&h);
        prop_assert_eq!(sort_hostfile(&s), s.clone());
        let mut a = h.hosts();
        let mut b = s.hosts();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        // hosts of one ToR are contiguous
        let mut closed = std::collections::BTreeSet::new();
        for w in s.entries.windows(2) {
            if w[0].1 != w[1].1 {
                prop_assert!(closed.insert(w[0].1));
                prop_assert!(!closed.contains(&w[1].1));
            }
        }
    }

    #[test]
    fn rings_are_hamiltonian(hosts in 1usize..5, gpus in 1usize..5, aware in any::<bool>()) {
        let t = clos(hosts, gpus, gpus, gpus, 2);
        let g = group(&t, if aware { RingMode::TopologyAware } else { RingMode::Default });
        prop_assert!(g.channels[0].is_hamiltonian(hosts * gpus));
        let far = inter_server_edges(&t, &g).filter(|e| e.hop_count != 1).count();
        if aware && hosts > 1 {
            // two GPUs per server cannot close an odd ring on one index
            let want = if gpus == 2 && hosts % 2 == 1 { 1 } else { 0 };
            prop_assert_eq!(far, want);
        }
    }
}

#[test]
fn allreduce_two_ranks_moves_one_gib_each() {
    let t = clos(2, 1, 1, 1, 0);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    let r = ring_allreduce(&mut eng, &g, GIB).unwrap();
    assert_eq!(r.status, CollectiveStatus::Completed);
    assert!(r.correct && r.integrity);
    for p in &r.per_rank {
        assert_eq!(p.bytes_sent, GIB);
        assert_eq!(p.bytes_received, GIB);
    }
}

#[test]
fn allreduce_four_ranks_matches_closed_form() {
    let t = clos(4, 1, 1, 1, 0);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    let nbytes = 256 * MIB;
    let r = ring_allreduce(&mut eng, &g, nbytes).unwrap();
    assert!(r.correct);
    for p in &r.per_rank {
        assert_eq!(p.bytes_sent, 2 * 3 * nbytes / 4);
        assert_eq!(p.bytes_received, 2 * 3 * nbytes / 4);
    }
    let want = 2.0 * 3.0 / 4.0 * nbytes as f64 * 8.0 / 400e9;
    let got = r.duration().unwrap().as_secs_f64();
    assert!((got - want).abs() / want < 0.02, "{got} vs {want}");
}

#[test]
fn allreduce_is_correct_on_many_shapes() {
    for (hosts, gpus, ch) in [(2, 2, 1), (3, 2, 2), (2, 4, 3), (5, 1, 1)] {
        let t = clos(hosts, gpus, gpus, gpus, 2);
        let hs: Vec<HostId> = (0..hosts).map(HostId).collect();
        let g = CommGroup::from_hosts(&t, &hs, RingMode::TopologyAware, ch).unwrap();
        let mut eng = engine(t);
        let r = ring_allreduce(&mut eng, &g, 10 * MIB + 3).unwrap();
        assert!(r.correct, "{hosts}x{gpus} ch {ch}");
        assert!(r.integrity);
    }
}

fn failover_rig(failover: bool) -> (TransportEngine, CommGroup) {
    let t = clos(2, 1, 2, 2, 2);
    let g = group(&t, RingMode::Default);
    let port = t.nic(HostId(0), 0);
    let cfg = TransportConfig {
        failover,
        timeout_exponent: 4,
        retry_count: 1,
        ..TransportConfig::default()
    };
    let mut eng = TransportEngine::new(t, cfg).unwrap();
    eng.schedule_fault(SimTime::from_micros(200), port, PortState::Down)
        .unwrap();
    (eng, g)
}

#[test]
fn port_down_mid_allreduce_with_failover_completes() {
    let (mut eng, g) = failover_rig(true);
    let r = ring_allreduce(&mut eng, &g, 256 * MIB).unwrap();
    assert_eq!(r.status, CollectiveStatus::Completed);
    assert!(r.correct && r.integrity);
    assert!(r.switches >= 1);
}

#[test]
fn port_down_mid_allreduce_without_failover_aborts() {
    let (mut eng, g) = failover_rig(false);
    let r = ring_allreduce(&mut eng, &g, 256 * MIB).unwrap();
    assert_eq!(r.status, CollectiveStatus::Failed);
    assert!(r.failed_connection.is_some());
    assert!(r.end.is_none());
    assert!(!r.correct);
}

#[test]
fn too_small_groups_are_rejected() {
    let t = clos(1, 1, 1, 1, 0);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    assert_eq!(
        ring_allreduce(&mut eng, &g, MIB).unwrap_err(),
        CollectiveError::GroupTooSmall { need: 2, got: 1 }
    );
    let t = clos(3, 1, 1, 1, 0);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    assert!(matches!(
        send_recv(&mut eng, &g, MIB),
        Err(CollectiveError::InvalidOp(_))
    ));
    assert!(matches!(
        broadcast(&mut eng, &g, 3, MIB),
        Err(CollectiveError::InvalidOp(_))
    ));
}

#[test]
fn allgather_four_ranks_receive_three_shares() {
    let t = clos(4, 1, 1, 1, 0);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    let s = 8 * MIB;
    let r = allgather(&mut eng, &g, s).unwrap();
    assert!(r.correct);
    assert!(r.per_rank.iter().all(|p| p.bytes_received == 3 * s));
}

#[test]
fn broadcast_relays_from_the_root() {
    let t = clos(3, 1, 1, 1, 0);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    let r = broadcast(&mut eng, &g, 1, 4 * MIB).unwrap();
    assert!(r.correct);
    assert_eq!(r.transfers, 2);
    assert_eq!(r.per_rank[1].bytes_sent, 4 * MIB);
    assert_eq!(r.per_rank[1].bytes_received, 0);
    assert_eq!(
        r.per_rank.iter().map(|p| p.bytes_sent).sum::<u64>(),
        8 * MIB
    );
}

#[test]
fn send_recv_moves_bytes_one_way() {
    let t = clos(2, 1, 1, 1, 0);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    let r = send_recv(&mut eng, &g, 3 * MIB).unwrap();
    assert!(r.correct);
    assert_eq!(
        (r.per_rank[0].bytes_sent, r.per_rank[1].bytes_received),
        (3 * MIB, 3 * MIB)
    );
    assert_eq!(r.per_rank[1].bytes_sent, 0);
}

#[test]
fn reducescatter_plus_allgather_equals_allreduce_bytes() {
    let nbytes = 64 * MIB;
    let t = clos(4, 1, 1, 1, 0);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    let mut comm = Communicator::new(g);
    let rs = comm
        .run(
            &mut eng,
            CollectiveOp::ReduceScatter { nbytes },
            SimTime::MAX,
        )
        .unwrap();
    let ag = comm
        .run(
            &mut eng,
            CollectiveOp::AllGather {
                nbytes_per_rank: nbytes / 4,
            },
            SimTime::MAX,
        )
        .unwrap();
    let ar = comm
        .run(&mut eng, CollectiveOp::AllReduce { nbytes }, SimTime::MAX)
        .unwrap();
    assert!(rs.correct && ag.correct && ar.correct);
    for r in 0..4 {
        assert_eq!(
            rs.per_rank[r].bytes_sent + ag.per_rank[r].bytes_sent,
            ar.per_rank[r].bytes_sent
        );
        assert_eq!(
            rs.per_rank[r].bytes_received + ag.per_rank[r].bytes_received,
            ar.per_rank[r].bytes_received
        );
    }
    assert_eq!(comm.op_counts, vec![3; 4]);
}

#[test]
fn alltoall_two_ranks_is_bidirectional_send_recv() {
    let t = clos(2, 1, 1, 1, 0);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    let r = alltoall(&mut eng, &g, 16 * MIB).unwrap();
    assert!(r.correct);
    assert_eq!(r.transfers, 2);
    assert!(r
        .per_rank
        .iter()
        .all(|p| p.bytes_sent == 16 * MIB && p.bytes_received == 16 * MIB));
    let one = 16.0 * MIB as f64 * 8.0 / 400e9;
    let got = r.duration().unwrap().as_secs_f64();
    assert!((got - one).abs() / one < 0.02, "{got} vs {one}");
}

#[test]
fn alltoall_zero_bytes_completes_immediately() {
    let t = clos(2, 2, 2, 2, 2);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    let r = alltoall(&mut eng, &g, 0).unwrap();
    assert_eq!(r.status, CollectiveStatus::Completed);
    assert_eq!(r.duration(), Some(SimTime::ZERO));
    assert_eq!(r.transfers, 0);
}

#[test]
fn alltoall_shares_one_bottleneck_max_min() {
    // 4 GPUs per host behind a single NIC: 16 cross-host flows each way
    let t = Topology::clos(&ClosConfig {
        hosts: 2,
        gpus_per_host: 4,
        nics_per_host: 1,
        leaves: 2,
        spines: 1,
        rail_optimized: false,
        ..ClosConfig::default()
    })
    .unwrap();
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    let b = 4 * MIB;
    let r = alltoall(&mut eng, &g, b).unwrap();
    assert!(r.correct);
    let want = 16.0 * b as f64 * 8.0 / 400e9;
    let got = r.duration().unwrap().as_secs_f64();
    assert!((got - want).abs() / want < 0.03, "{got} vs {want}");
}

#[test]
fn topology_aware_rings_use_less_spine_traffic() {
    let run = |mode| {
        let t = clos(2, 2, 2, 2, 2);
        let g = group(&t, mode);
        let mut eng = engine(t);
        ring_allreduce(&mut eng, &g, 64 * MIB).unwrap()
    };
    let d = run(RingMode::Default);
    let a = run(RingMode::TopologyAware);
    assert!(d.correct && a.correct);
    assert_eq!(a.spine_bytes, 0);
    assert!(d.spine_bytes > 0);
    assert!(a.duration() <= d.duration());
}

#[test]
fn result_exports_json() {
    let t = clos(2, 1, 1, 1, 0);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    let j = ring_allreduce(&mut eng, &g, MIB).unwrap().to_json();
    assert_eq!(j["op"]["op"], "all_reduce");
    assert_eq!(j["per_rank"].as_array().unwrap().len(), 2);
    assert!(j["link_bytes"].as_object().unwrap().len() >= 2);
}

#[test]
fn a_stalled_rank_stalls_the_group() {
    let t = clos(3, 1, 1, 1, 0);
    let g = group(&t, RingMode::Default);
    let mut eng = engine(t);
    let r = run_collective(
        &mut eng,
        &g,
        CollectiveOp::AllReduce { nbytes: 64 * MIB },
        SimTime::from_micros(50),
    );
    assert!(matches!(r, Err(CollectiveError::Timeout(_))));
}
