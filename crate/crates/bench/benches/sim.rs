use std::hint::black_box;

use cclsim::collectives::{
    build_ring, CollectiveOp, CommGroup, Communicator, FlipPolicy, RingMode,
};
use cclsim::harness::{run_scenario, ScenarioParams};
use cclsim::monitor::sample_series;
use cclsim::netsim::{ClosConfig, HostId, Topology};
use cclsim::pipeline::{run_1f1b, P2pMode, PipelineConfig};
use cclsim::time::SimTime;
use cclsim::transport::{MessageRecord, TransportConfig, TransportEngine};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn pair() -> Topology {
    Topology::clos(&ClosConfig {
        hosts: 2,
        gpus_per_host: 1,
        nics_per_host: 2,
        ..ClosConfig::default()
    })
    .unwrap()
}

fn p2p(bytes: u64, messages: u32) -> TransportEngine {
    let topo = pair();
    let (a, b) = (topo.gpu(HostId(0), 0), topo.gpu(HostId(1), 0));
    let mut eng = TransportEngine::new(topo, TransportConfig::default()).unwrap();
    let c = eng.open_connection(a, b).unwrap();
    for _ in 0..messages {
        eng.send_message(c, bytes).unwrap();
    }
    eng.run_until(SimTime::from_secs_f64(60.0)).unwrap();
    eng
}

fn transport(c: &mut Criterion) {
    c.bench_function("p2p_256MiB", |b| b.iter(|| black_box(p2p(256 << 20, 1))));
    c.bench_function("p2p_1000_msgs_1MiB", |b| {
        b.iter(|| black_box(p2p(1 << 20, 1000)))
    });
}

fn collectives(c: &mut Criterion) {
    let topo = Topology::clos(&ClosConfig {
        hosts: 4,
        ..ClosConfig::default()
    })
    .unwrap();
    let ranks: Vec<_> = topo.hosts.iter().flat_map(|h| h.gpus.clone()).collect();
    c.bench_function("build_ring_aware_32", |b| {
        b.iter(|| {
            build_ring(
                &topo,
                black_box(&ranks),
                RingMode::TopologyAware,
                FlipPolicy::Odd,
            )
            .unwrap()
        })
    });
    c.bench_function("allreduce_32_ranks_64MiB", |b| {
        b.iter_batched(
            || {
                let eng = TransportEngine::new(topo.clone(), TransportConfig::default()).unwrap();
                let g = CommGroup::new(
                    &topo,
                    ranks.clone(),
                    RingMode::TopologyAware,
                    FlipPolicy::Odd,
                    1,
                    2,
                )
                .unwrap();
                (eng, Communicator::new(g))
            },
            |(mut eng, mut comm)| {
                comm.run(
                    &mut eng,
                    CollectiveOp::AllReduce { nbytes: 64 << 20 },
                    SimTime::from_secs_f64(60.0),
                )
                .unwrap()
            },
            BatchSize::LargeInput,
        )
    });
}

fn monitor(c: &mut Criterion) {
    let eng = p2p(64 << 10, 20_000);
    let records: Vec<MessageRecord> = eng.connections()[0].messages.clone();
    c.bench_function("sample_series_20k_w8", |b| {
        b.iter(|| sample_series(black_box(&records), 8).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let cfg = PipelineConfig {
        workers: 8,
        microbatches: 64,
        p2p_mode: P2pMode::Offloaded,
        p2p_ns: Some(2_000_000),
        ..PipelineConfig::default()
    };
    c.bench_function("1f1b_8x64", |b| {
        b.iter(|| run_1f1b(black_box(&cfg)).unwrap())
    });
}

fn scenarios(c: &mut Criterion) {
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    let p = ScenarioParams {
        trials: Some(100),
        ..Default::default()
    };
    for name in ["failover-figure10", "fuzz-failover", "monitor-figure11"] {
        g.bench_function(name, |b| b.iter(|| run_scenario(name, &p).unwrap()));
    }
    g.finish();
}

criterion_group!(
    benches,
    transport,
    collectives,
    monitor,
    pipeline,
    scenarios
);
criterion_main!(benches);
