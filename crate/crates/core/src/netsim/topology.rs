//! Two-tier leaf/spine cluster model with NVLink islands inside each host.
//!
//! Links are directed: one physical cable is two [`Link`]s that share a fault
//! domain. A NIC port failure takes both directions down.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::time::SimTime;

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub usize);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(HostId, "h");
id_type!(GpuId, "gpu");
id_type!(NicPortId, "nic");
id_type!(SwitchId, "sw");
id_type!(LinkId, "link");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Node {
    Gpu(GpuId),
    Nic(NicPortId),
    NvSwitch(HostId),
    Switch(SwitchId),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Gpu(g) => write!(f, "{g}"),
            Node::Nic(n) => write!(f, "{n}"),
            Node::NvSwitch(h) => write!(f, "nvsw.{h}"),
            Node::Switch(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortState {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchTier {
    Leaf,
    Spine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    NvLink,
    Access,
    Uplink,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Host {
    pub id: HostId,
    pub gpus: Vec<GpuId>,
    pub nic_ports: Vec<NicPortId>,
    pub cpu_proxy_count: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Switch {
    pub id: SwitchId,
    pub tier: SwitchTier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub from: Node,
    pub to: Node,
    pub kind: LinkKind,
    /// Bits per second.
    pub capacity_bps: f64,
    pub propagation_delay: SimTime,
    pub state: PortState,
}

/// Shape parameters for [`Topology::clos`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosConfig {
    pub hosts: usize,
    pub gpus_per_host: usize,
    pub nics_per_host: usize,
    pub leaves: usize,
    pub spines: usize,
    pub nic_gbps: f64,
    /// Per leaf-spine link. Defaults to a 1:1 oversubscription ratio.
    pub uplink_gbps: Option<f64>,
    pub nvlink_gbps: f64,
    pub link_delay_ns: u64,
    /// NIC index `i` of every host lands on the same leaf. When false, every
    /// NIC of a host lands on the host's ToR (`host / hosts_per_leaf`).
    pub rail_optimized: bool,
    pub cpu_proxy_count: u32,
}

impl Default for ClosConfig {
    fn default() -> Self {
        ClosConfig {
            hosts: 2,
            gpus_per_host: 8,
            nics_per_host: 8,
            leaves: 2,
            spines: 2,
            nic_gbps: 400.0,
            uplink_gbps: None,
            nvlink_gbps: 2400.0,
            link_delay_ns: 10,
            rail_optimized: true,
            cpu_proxy_count: 8,
        }
    }
}

/// A route between two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub links: Vec<LinkId>,
    /// Number of network switches traversed (0 for NVLink routes).
    pub hop_count: u32,
    pub delay: SimTime,
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub hosts: Vec<Host>,
    pub switches: Vec<Switch>,
    pub links: Vec<Link>,
    /// NIC local index -> leaf, when rail-optimized.
    pub rail_map: Option<Vec<SwitchId>>,
    nic_leaf: Vec<SwitchId>,
    nic_host: Vec<HostId>,
    nic_local: Vec<usize>,
    gpu_host: Vec<HostId>,
    gpu_local: Vec<usize>,
    leaves: Vec<SwitchId>,
    spines: Vec<SwitchId>,
    link_index: BTreeMap<(Node, Node), LinkId>,
    port_links: Vec<[LinkId; 2]>,
}

impl Topology {
    pub fn clos(cfg: &ClosConfig) -> Result<Topology, SimError> {
        let bad = |m: &str| Err(SimError::InvalidTopology(m.to_string()));
        if cfg.hosts == 0 || cfg.gpus_per_host == 0 || cfg.nics_per_host == 0 {
            return bad("hosts, gpus_per_host and nics_per_host must be >= 1");
        }
        if cfg.leaves == 0 {
            return bad("at least one leaf switch is required");
        }
        if cfg.leaves > 1 && cfg.spines == 0 {
            return bad("multiple leaves need at least one spine");
        }
        if !(cfg.nic_gbps > 0.0 && cfg.nvlink_gbps > 0.0) {
            return bad("link capacities must be positive");
        }
        let hosts_per_leaf = cfg.hosts.div_ceil(cfg.leaves);

        let mut switches = Vec::new();
        let mut leaves = Vec::new();
        let mut spines = Vec::new();
        for _ in 0..cfg.leaves {
            let id = SwitchId(switches.len());
            switches.push(Switch {
                id,
                tier: SwitchTier::Leaf,
            });
            leaves.push(id);
        }
        for _ in 0..cfg.spines {
            let id = SwitchId(switches.len());
            switches.push(Switch {
                id,
                tier: SwitchTier::Spine,
            });
            spines.push(id);
        }

        let mut topo = Topology {
            hosts: Vec::new(),
            switches,
            links: Vec::new(),
            rail_map: None,
            nic_leaf: Vec::new(),
            nic_host: Vec::new(),
            nic_local: Vec::new(),
            gpu_host: Vec::new(),
            gpu_local: Vec::new(),
            leaves,
            spines,
            link_index: BTreeMap::new(),
            port_links: Vec::new(),
        };
        let delay = SimTime::from_nanos(cfg.link_delay_ns);
        let nic_bps = cfg.nic_gbps * 1e9;
        let nv_bps = cfg.nvlink_gbps * 1e9;

        let rail_leaf = |i: usize| i * cfg.leaves / cfg.nics_per_host;
        if cfg.rail_optimized {
            topo.rail_map = Some(
                (0..cfg.nics_per_host)
                    .map(|i| topo.leaves[rail_leaf(i)])
                    .collect(),
            );
        }

        let mut leaf_downlinks = vec![0usize; cfg.leaves];
        for h in 0..cfg.hosts {
            let host = HostId(h);
            let mut gpus = Vec::new();
            let mut nics = Vec::new();
            for g in 0..cfg.gpus_per_host {
                let gpu = GpuId(topo.gpu_host.len());
                topo.gpu_host.push(host);
                topo.gpu_local.push(g);
                topo.add_duplex(
                    Node::Gpu(gpu),
                    Node::NvSwitch(host),
                    LinkKind::NvLink,
                    nv_bps,
                    delay,
                );
                gpus.push(gpu);
            }
            for i in 0..cfg.nics_per_host {
                let nic = NicPortId(topo.nic_host.len());
                let leaf_ix = if cfg.rail_optimized {
                    rail_leaf(i)
                } else {
                    h / hosts_per_leaf
                };
                let leaf = topo.leaves[leaf_ix];
                leaf_downlinks[leaf_ix] += 1;
                topo.nic_host.push(host);
                topo.nic_local.push(i);
                topo.nic_leaf.push(leaf);
                let (up, down) = topo.add_duplex(
                    Node::Nic(nic),
                    Node::Switch(leaf),
                    LinkKind::Access,
                    nic_bps,
                    delay,
                );
                topo.port_links.push([up, down]);
                nics.push(nic);
            }
            topo.hosts.push(Host {
                id: host,
                gpus,
                nic_ports: nics,
                cpu_proxy_count: cfg.cpu_proxy_count,
            });
        }

        if cfg.leaves > 1 {
            for (li, &leaf) in topo.leaves.clone().iter().enumerate() {
                let uplink_bps = match cfg.uplink_gbps {
                    Some(g) => g * 1e9,
                    None => nic_bps * leaf_downlinks[li].max(1) as f64 / cfg.spines as f64,
                };
                for &spine in &topo.spines.clone() {
                    topo.add_duplex(
                        Node::Switch(leaf),
                        Node::Switch(spine),
                        LinkKind::Uplink,
                        uplink_bps,
                        delay,
                    );
                }
            }
        }
        topo.validate()?;
        Ok(topo)
    }

    fn add_duplex(
        &mut self,
        a: Node,
        b: Node,
        kind: LinkKind,
        bps: f64,
        delay: SimTime,
    ) -> (LinkId, LinkId) {
        let mut add = |from: Node, to: Node| {
            let id = LinkId(self.links.len());
            self.links.push(Link {
                id,
                from,
                to,
                kind,
                capacity_bps: bps,
                propagation_delay: delay,
                state: PortState::Up,
            });
            self.link_index.insert((from, to), id);
            id
        };
        (add(a, b), add(b, a))
    }

    /// Checks the structural invariants of the cluster.
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::InvalidTopology(m));
        for h in &self.hosts {
            if h.gpus.is_empty() || h.nic_ports.is_empty() {
                return err(format!("host {} has no GPUs or no NIC ports", h.id));
            }
        }
        for (n, leaf) in self.nic_leaf.iter().enumerate() {
            if self.switches[leaf.0].tier != SwitchTier::Leaf {
                return err(format!("nic{n} attaches to a non-leaf switch"));
            }
        }
        if let Some(rail) = &self.rail_map {
            for n in 0..self.nic_leaf.len() {
                if rail[self.nic_local[n]] != self.nic_leaf[n] {
                    return err(format!("nic{n} breaks the rail map"));
                }
            }
        }
        for l in &self.links {
            if !(l.capacity_bps > 0.0) {
                return err(format!("{} has non-positive capacity", l.id));
            }
        }
        // Connectivity: every leaf in use must reach every other leaf in use.
        let used: Vec<SwitchId> = {
            let mut v = self.nic_leaf.clone();
            v.sort();
            v.dedup();
            v
        };
        if used.len() > 1 && self.spines.is_empty() {
            return err("leaves are disconnected (no spine)".into());
        }
        Ok(())
    }

    pub fn gpu_count(&self) -> usize {
        self.gpu_host.len()
    }

    pub fn nic_count(&self) -> usize {
        self.nic_host.len()
    }

    pub fn host_of_gpu(&self, gpu: GpuId) -> Result<HostId, SimError> {
        self.gpu_host
            .get(gpu.0)
            .copied()
            .ok_or(SimError::UnknownGpu(gpu.0))
    }

    /// Index of the GPU within its host.
    pub fn gpu_local_index(&self, gpu: GpuId) -> usize {
        self.gpu_local[gpu.0]
    }

    pub fn host_of_nic(&self, nic: NicPortId) -> Result<HostId, SimError> {
        self.nic_host
            .get(nic.0)
            .copied()
            .ok_or(SimError::UnknownPort(nic))
    }

    pub fn nic_local_index(&self, nic: NicPortId) -> usize {
        self.nic_local[nic.0]
    }

    pub fn leaf_of_nic(&self, nic: NicPortId) -> Result<SwitchId, SimError> {
        self.nic_leaf
            .get(nic.0)
            .copied()
            .ok_or(SimError::UnknownPort(nic))
    }

    pub fn gpu(&self, host: HostId, local: usize) -> GpuId {
        self.hosts[host.0].gpus[local]
    }

    pub fn nic(&self, host: HostId, local: usize) -> NicPortId {
        self.hosts[host.0].nic_ports[local]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn is_spine_link(&self, id: LinkId) -> bool {
        self.links[id.0].kind == LinkKind::Uplink
    }

    /// Both directed links of a NIC port's access cable.
    pub fn port_links(&self, nic: NicPortId) -> Result<[LinkId; 2], SimError> {
        self.port_links
            .get(nic.0)
            .copied()
            .ok_or(SimError::UnknownPort(nic))
    }

    pub fn port_state(&self, nic: NicPortId) -> Result<PortState, SimError> {
        let [up, _] = self.port_links(nic)?;
        Ok(self.links[up.0].state)
    }

    pub fn set_port_state(
        &mut self,
        nic: NicPortId,
        state: PortState,
    ) -> Result<[LinkId; 2], SimError> {
        let ls = self.port_links(nic)?;
        for l in ls {
            self.links[l.0].state = state;
        }
        Ok(ls)
    }

    pub fn path_is_up(&self, path: &Path) -> bool {
        path.links
            .iter()
            .all(|l| self.links[l.0].state == PortState::Up)
    }

    /// PCIe-style distance from a GPU to a NIC on the same host.
    pub fn gpu_nic_distance(&self, gpu: GpuId, nic: NicPortId) -> Option<usize> {
        if self.gpu_host[gpu.0] != self.nic_host[nic.0] {
            return None;
        }
        Some(self.gpu_local[gpu.0].abs_diff(self.nic_local[nic.0]))
    }

    /// NICs of the GPU's host ordered by distance, index as tie-break.
    /// The first entry is the primary port, the second the backup.
    pub fn nics_by_distance(&self, gpu: GpuId) -> Result<Vec<NicPortId>, SimError> {
        let host = self.host_of_gpu(gpu)?;
        let mut nics = self.hosts[host.0].nic_ports.clone();
        nics.sort_by_key(|&n| (self.gpu_nic_distance(gpu, n).unwrap_or(usize::MAX), n));
        Ok(nics)
    }

    fn link_between(&self, a: Node, b: Node) -> Result<LinkId, SimError> {
        self.link_index
            .get(&(a, b))
            .copied()
            .ok_or_else(|| SimError::NoRoute(a.to_string(), b.to_string()))
    }

    fn make_path(&self, links: Vec<LinkId>, hop_count: u32) -> Path {
        let delay = links.iter().fold(SimTime::ZERO, |acc, l| {
            acc + self.links[l.0].propagation_delay
        });
        Path {
            links,
            hop_count,
            delay,
        }
    }

    /// Static shortest path between two GPUs on one host (NVLink) or two NIC
    /// ports (through the fabric).
    pub fn path(&self, src: Node, dst: Node) -> Result<Path, SimError> {
        let no_route = || SimError::NoRoute(src.to_string(), dst.to_string());
        match (src, dst) {
            (Node::Gpu(a), Node::Gpu(b)) => {
                let (ha, hb) = (self.host_of_gpu(a)?, self.host_of_gpu(b)?);
                if ha != hb || a == b {
                    return Err(no_route());
                }
                let nv = Node::NvSwitch(ha);
                let links = vec![self.link_between(src, nv)?, self.link_between(nv, dst)?];
                Ok(self.make_path(links, 0))
            }
            (Node::Nic(a), Node::Nic(b)) => {
                if a == b {
                    return Err(no_route());
                }
                let (la, lb) = (self.leaf_of_nic(a)?, self.leaf_of_nic(b)?);
                let mut links = vec![self.link_between(src, Node::Switch(la))?];
                let hops = if la == lb {
                    1
                } else {
                    if self.spines.is_empty() {
                        return Err(no_route());
                    }
                    let spine = self.spines[(a.0 + b.0) % self.spines.len()];
                    links.push(self.link_between(Node::Switch(la), Node::Switch(spine))?);
                    links.push(self.link_between(Node::Switch(spine), Node::Switch(lb))?);
                    3
                };
                links.push(self.link_between(Node::Switch(lb), dst)?);
                Ok(self.make_path(links, hops))
            }
            _ => Err(no_route()),
        }
    }

    /// Route between two GPUs: NVLink inside a host, otherwise through each
    /// GPU's closest NIC.
    pub fn gpu_route(&self, src: GpuId, dst: GpuId) -> Result<Path, SimError> {
        if self.host_of_gpu(src)? == self.host_of_gpu(dst)? {
            return self.path(Node::Gpu(src), Node::Gpu(dst));
        }
        let a = self.nics_by_distance(src)?[0];
        let b = self.nics_by_distance(dst)?[0];
        self.path(Node::Nic(a), Node::Nic(b))
    }

    /// Longest one-way propagation delay of any NIC-to-NIC route.
    pub fn max_path_delay(&self) -> SimTime {
        let max_link = self
            .links
            .iter()
            .map(|l| l.propagation_delay)
            .max()
            .unwrap_or(SimTime::ZERO);
        let hops = if self.spines.is_empty() { 2 } else { 4 };
        SimTime(max_link.0 * hops)
    }

    /// Leaf switch of each host's first NIC port, used as its ToR label.
    pub fn tor_of_host(&self, host: HostId) -> SwitchId {
        self.nic_leaf[self.hosts[host.0].nic_ports[0].0]
    }

    /// Resolves names like `h0.nic1` or `nic5`.
    pub fn parse_port(&self, name: &str) -> Result<NicPortId, SimError> {
        let unknown = || SimError::InvalidTopology(format!("unknown port name `{name}`"));
        if let Some(rest) = name.strip_prefix('h') {
            let (h, n) = rest.split_once(".nic").ok_or_else(unknown)?;
            let h: usize = h.parse().map_err(|_| unknown())?;
            let n: usize = n.parse().map_err(|_| unknown())?;
            let host = self.hosts.get(h).ok_or_else(unknown)?;
            return host.nic_ports.get(n).copied().ok_or_else(unknown);
        }
        let n: usize = name
            .strip_prefix("nic")
            .and_then(|s| s.parse().ok())
            .ok_or_else(unknown)?;
        if n < self.nic_count() {
            Ok(NicPortId(n))
        } else {
            Err(unknown())
        }
    }
}
