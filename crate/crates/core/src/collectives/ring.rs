use serde::{Deserialize, Serialize};

use super::CollectiveError;
use crate::netsim::{GpuId, HostId, Node, SwitchId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RingMode {
    /// Every server enters at its lowest GPU index and leaves at its highest.
    #[default]
    Default,
    /// Half of the servers traverse their GPUs in reverse so each
    /// inter-server hop joins GPUs of the same index.
    TopologyAware,
}

/// Which servers get reversed in TopologyAware mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipPolicy {
    #[default]
    Odd,
    Even,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RingEdge {
    /// Indices into the group's rank list.
    pub from: usize,
    pub to: usize,
    pub hop_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RingChannel {
    /// Cyclic order of rank indices.
    pub order: Vec<usize>,
    pub edges: Vec<RingEdge>,
}

impl RingChannel {
    pub fn position(&self, rank: usize) -> usize {
        self.order
            .iter()
            .position(|&r| r == rank)
            .expect("rank in ring")
    }

    pub fn is_hamiltonian(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        self.order.len() == n
            && self
                .order
                .iter()
                .all(|&r| r < n && !std::mem::replace(&mut seen[r], true))
            && self.edges.len() == n
            && self
                .edges
                .iter()
                .enumerate()
                .all(|(i, e)| e.from == self.order[i] && e.to == self.order[(i + 1) % n])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommGroup {
    pub ranks: Vec<GpuId>,
    pub channels: Vec<RingChannel>,
    pub qp_per_connection: usize,
    pub channel_count: usize,
}

impl CommGroup {
    pub fn new(
        topo: &Topology,
        ranks: Vec<GpuId>,
        mode: RingMode,
        flip: FlipPolicy,
        channel_count: usize,
        qp_per_connection: usize,
    ) -> Result<Self, CollectiveError> {
        let ring = build_ring(topo, &ranks, mode, flip)?;
        let channel_count = channel_count.max(1);
        Ok(CommGroup {
            ranks,
            channels: vec![ring; channel_count],
            qp_per_connection,
            channel_count,
        })
    }

    /// Every GPU of the listed hosts, host by host.
    pub fn from_hosts(
        topo: &Topology,
        hosts: &[HostId],
        mode: RingMode,
        channel_count: usize,
    ) -> Result<Self, CollectiveError> {
        let ranks = hosts
            .iter()
            .flat_map(|h| topo.hosts[h.0].gpus.iter().copied())
            .collect();
        Self::new(topo, ranks, mode, FlipPolicy::default(), channel_count, 1)
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

fn hop_count(topo: &Topology, a: GpuId, b: GpuId) -> Result<usize, CollectiveError> {
    let (ha, hb) = (topo.host_of_gpu(a)?, topo.host_of_gpu(b)?);
    if ha == hb {
        return Ok(0);
    }
    let na = topo.nics_by_distance(a)?[0];
    let nb = topo.nics_by_distance(b)?[0];
    let p = topo
        .path(Node::Nic(na), Node::Nic(nb))
        .map_err(|e| CollectiveError::InfeasibleRing(e.to_string()))?;
    Ok(p.hop_count as usize)
}

/// With an odd server count the alternating flip leaves the wrap edge
/// between different indices. Enter the first server at its second GPU and
/// leave the last server through that same index. Needs at least 3 GPUs on
/// the first server.
fn close_ring(topo: &Topology, ranks: &[GpuId], servers: &mut [(HostId, Vec<usize>)]) {
    let idx = |i: usize| topo.gpu_local_index(ranks[i]);
    let last = servers.len() - 1;
    let exit = *servers[last].1.last().unwrap();
    if idx(exit) == idx(servers[0].1[0]) || servers[0].1.len() < 3 {
        return;
    }
    let entry = idx(servers[0].1[1]);
    if let Some(p) = servers[last]
        .1
        .iter()
        .position(|&i| idx(i) == entry)
        .filter(|&p| p > 0)
    {
        servers[0].1.swap(0, 1);
        let tail = &mut servers[last].1;
        let m = tail.remove(p);
        tail.push(m);
    }
}

/// Ring over `ranks`: servers in order of first appearance, GPUs by local
/// index within each server, reversed on flipped servers in TopologyAware
/// mode.
pub fn build_ring(
    topo: &Topology,
    ranks: &[GpuId],
    mode: RingMode,
    flip: FlipPolicy,
) -> Result<RingChannel, CollectiveError> {
    if ranks.is_empty() {
        return Err(CollectiveError::GroupTooSmall { need: 1, got: 0 });
    }
    let mut seen = std::collections::BTreeSet::new();
    for &g in ranks {
        if !seen.insert(g) {
            return Err(CollectiveError::DuplicateRank(g));
        }
    }
    let mut servers: Vec<(HostId, Vec<usize>)> = Vec::new();
    for (i, &g) in ranks.iter().enumerate() {
        let h = topo.host_of_gpu(g)?;
        match servers.iter_mut().find(|(x, _)| *x == h) {
            Some((_, v)) => v.push(i),
            None => servers.push((h, vec![i])),
        }
    }
    let mut order = Vec::with_capacity(ranks.len());
    for (si, (_, members)) in servers.iter_mut().enumerate() {
        members.sort_by_key(|&i| topo.gpu_local_index(ranks[i]));
        let flipped = mode == RingMode::TopologyAware
            && match flip {
                FlipPolicy::Odd => si % 2 == 1,
                FlipPolicy::Even => si % 2 == 0,
            };
        if flipped {
            members.reverse();
        }
    }
    if mode == RingMode::TopologyAware && servers.len() > 2 {
        close_ring(topo, ranks, &mut servers);
    }
    for (_, members) in &servers {
        order.extend(members.iter().copied());
    }
    let n = order.len();
    let edges = (0..n)
        .map(|i| {
            let (from, to) = (order[i], order[(i + 1) % n]);
            Ok(RingEdge {
                from,
                to,
                hop_count: if n == 1 {
                    0
                } else {
                    hop_count(topo, ranks[from], ranks[to])?
                },
            })
        })
        .collect::<Result<Vec<_>, CollectiveError>>()?;
    Ok(RingChannel { order, edges })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hostfile {
    pub entries: Vec<(HostId, SwitchId)>,
}

impl Hostfile {
    pub fn from_topology(topo: &Topology, hosts: &[HostId]) -> Self {
        Hostfile {
            entries: hosts.iter().map(|&h| (h, topo.tor_of_host(h))).collect(),
        }
    }

    pub fn hosts(&self) -> Vec<HostId> {
        self.entries.iter().map(|e| e.0).collect()
    }
}

/// Groups hosts under the same ToR, ToR blocks in order of first
/// appearance, original order kept inside a block.
pub fn sort_hostfile(hf: &Hostfile) -> Hostfile {
    let mut tors: Vec<SwitchId> = Vec::new();
    for &(_, t) in &hf.entries {
        if !tors.contains(&t) {
            tors.push(t);
        }
    }
    let entries = tors
        .iter()
        .flat_map(|&t| hf.entries.iter().filter(move |e| e.1 == t).copied())
        .collect();
    Hostfile { entries }
}
