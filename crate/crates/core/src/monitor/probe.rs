//! Closed-loop message stream used to exercise the estimator: each WR is
//! posted when the previous one completes, so t2 − t1 carries no queueing.

use serde::{Deserialize, Serialize};

use super::MessageRecord;
use crate::error::SimError;
use crate::netsim::{ClosConfig, EventQueue, HostId, Node, Topology, Trace};
use crate::time::SimTime;
use crate::verbs::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeStreamConfig {
    pub topology: ClosConfig,
    pub message_bytes: u64,
    /// WRs kept in flight.
    pub depth: usize,
    pub duration_ns: u64,
    /// A competing flow on the same path starts here.
    pub disturbance_at_ns: Option<u64>,
    pub disturbance_bytes: u64,
}

impl Default for ProbeStreamConfig {
    fn default() -> Self {
        ProbeStreamConfig {
            topology: ClosConfig {
                hosts: 2,
                gpus_per_host: 1,
                nics_per_host: 1,
                leaves: 1,
                spines: 0,
                nic_gbps: 400.0,
                link_delay_ns: 10,
                ..ClosConfig::default()
            },
            message_bytes: 64 << 10,
            depth: 1,
            duration_ns: 400_000,
            disturbance_at_ns: Some(100_000),
            disturbance_bytes: 1 << 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Ev {
    Fabric(FabricEvent),
    Disturb,
}

impl From<FabricEvent> for Ev {
    fn from(e: FabricEvent) -> Self {
        Ev::Fabric(e)
    }
}

/// Streams messages between host 0 and host 1 and returns one record per
/// successful send completion.
pub fn probe_stream(cfg: &ProbeStreamConfig) -> Result<Vec<MessageRecord>, SimError> {
    if cfg.message_bytes == 0 {
        return Err(SimError::ZeroLengthMessage);
    }
    let topo = Topology::clos(&cfg.topology)?;
    let (a, b) = (topo.nic(HostId(0), 0), topo.nic(HostId(1), 0));
    let links = topo.path(Node::Nic(a), Node::Nic(b))?.links;
    let mut fabric = Fabric::new(topo, Trace::new(false));
    let mut q: EventQueue<Ev> = EventQueue::new();
    let len = cfg.message_bytes;
    let src = fabric.register_region(
        RegionOwner::Host(HostId(0)),
        len,
        RegionKind::ChunkBuffer,
        1,
    );
    let dst = fabric.register_region(
        RegionOwner::Host(HostId(1)),
        len,
        RegionKind::ChunkBuffer,
        0,
    );
    let scq = fabric.create_cq(DEFAULT_CQ_CAPACITY);
    let rcq = fabric.create_cq(DEFAULT_CQ_CAPACITY);
    let (qa, qb) = fabric.connect(
        Endpoint {
            host: HostId(0),
            node: Node::Nic(a),
        },
        Endpoint {
            host: HostId(1),
            node: Node::Nic(b),
        },
        QpRole::Primary,
        QpConfig::default(),
        scq,
        rcq,
    )?;
    if let Some(at) = cfg.disturbance_at_ns {
        q.schedule(Ev::Disturb, SimTime(at))?;
    }
    let end = SimTime(cfg.duration_ns);
    let post = |fabric: &mut Fabric, q: &mut EventQueue<Ev>| -> Result<(), SimError> {
        fabric.post_recv(q.now(), qb, dst, 0, len)?;
        fabric.post_send(q, qa, SendRequest::data(src, 0, len, 0))?;
        Ok(())
    };
    for _ in 0..cfg.depth.max(1) {
        post(&mut fabric, &mut q)?;
    }
    let mut out = Vec::new();
    while let Some((_, ev)) = q.pop_until(end) {
        match ev {
            Ev::Fabric(e) => fabric.handle(&mut q, e),
            Ev::Disturb => {
                fabric.start_background_flow(&mut q, links.clone(), cfg.disturbance_bytes);
            }
        }
        fabric.take_outputs();
        fabric.poll_cq(rcq, usize::MAX);
        for wc in fabric.poll_cq(scq, usize::MAX) {
            if wc.status != WcStatus::Success {
                continue;
            }
            out.push(MessageRecord {
                wr_id: wc.wr_id,
                size: wc.bytes,
                t1: wc.post_time,
                t2: wc.completion_time,
            });
            if q.now() < end {
                post(&mut fabric, &mut q)?;
            }
        }
        if let Some(e) = fabric.fatal() {
            return Err(e.clone());
        }
    }
    Ok(out)
}
